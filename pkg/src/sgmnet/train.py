"""Mini-batch training and batched inference."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .data import MattingSample, semantic_target, transition_mask
from .losses import LossBreakdown, LossWeights, loss_alpha, loss_d, loss_s, total_loss
from .model import ForwardOutputs, ModelConfig, build_params, forward
from .nn import ParamStore, SgdConfig, sgd_step
from .tensor import Tape, Tensor4, backward

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "iteration", "lr", "l_s", "l_d", "l_alpha", "l_c", "total")


@dataclass
class Batch:
    image: Tensor4
    alpha: Tensor4
    fg: Tensor4 | None
    bg: Tensor4 | None
    sem_target: Tensor4
    mask: Tensor4


def make_batch(samples: Sequence[MattingSample], band_radius: int = 3, flips=None, dtype=np.float64) -> Batch:
    """Stack samples, optionally flipping some horizontally, and build their targets."""
    def stack(get):
        arrs = []
        for k, s in enumerate(samples):
            a = get(s).data
            if flips is not None and flips[k]:
                a = a[..., ::-1]
            arrs.append(a)
        return np.ascontiguousarray(np.concatenate(arrs, axis=0), dtype=dtype)

    alpha = stack(lambda s: s.alpha)
    has_fb = all(s.fg is not None and s.bg is not None for s in samples)
    return Batch(
        image=Tensor4(stack(lambda s: s.image)),
        alpha=Tensor4(alpha),
        fg=Tensor4(stack(lambda s: s.fg)) if has_fb else None,
        bg=Tensor4(stack(lambda s: s.bg)) if has_fb else None,
        sem_target=semantic_target(alpha),
        mask=transition_mask(alpha, band_radius),
    )


def compute_loss(out: ForwardOutputs, batch: Batch, weights: LossWeights) -> LossBreakdown:
    l_s = loss_s(out.s_po, batch.sem_target)
    l_d = loss_d(out.d_p, batch.alpha, batch.mask)
    l_a, l_c = loss_alpha(out.alpha_p, batch.alpha, batch.image, batch.fg, batch.bg)
    return total_loss(l_s, l_d, l_a, l_c, weights)


def train_step(
    params: ParamStore, batch: Batch, cfg: ModelConfig, sgd: SgdConfig, weights: LossWeights, epoch: int
) -> LossBreakdown:
    with Tape() as tape:
        out = forward(batch.image, params, cfg)
        br = compute_loss(out, batch, weights)
    grads = backward(tape, br.total)
    sgd_step(params, params.named_grads(grads), sgd, epoch)
    return br


def train(
    samples: Sequence[MattingSample],
    cfg: ModelConfig,
    sgd: SgdConfig | None = None,
    weights: LossWeights | None = None,
    *,
    epochs: int = 30,
    batch_size: int = 4,
    max_iters: int | None = None,
    seed: int = 0,
    band_radius: int = 3,
    flip: bool = True,
    dtype=np.float32,
    params: ParamStore | None = None,
    on_step: Callable[[dict], None] | None = None,
    on_epoch_end: Callable[[int, ParamStore], None] | None = None,
) -> tuple[ParamStore, list[dict]]:
    """Train from scratch (or from ``params``); returns the parameters and per-iteration log rows."""
    sgd = sgd or SgdConfig()
    weights = weights or LossWeights()
    if params is None:
        params = build_params(cfg, seed=seed, dtype=dtype)
    if batch_size < 1 or len(samples) < batch_size:
        raise ValueError(f"need at least batch_size={batch_size} samples, got {len(samples)}")
    rows: list[dict] = []
    it = 0
    per_epoch = len(samples) // batch_size
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, 7919, epoch])
        order = rng.permutation(len(samples))
        flips = rng.random(len(samples)) < 0.5 if flip else np.zeros(len(samples), bool)
        for b in range(per_epoch):
            if max_iters is not None and it >= max_iters:
                break
            idx = order[b * batch_size : (b + 1) * batch_size]
            batch = make_batch([samples[i] for i in idx], band_radius, flips[idx], dtype)
            br = train_step(params, batch, cfg, sgd, weights, epoch)
            it += 1
            row = {"epoch": epoch, "iteration": it, "lr": sgd.lr_at(epoch), **br.values()}
            if not np.isfinite(row["total"]):
                raise FloatingPointError(f"loss diverged at iteration {it}")
            rows.append(row)
            if on_step:
                on_step(row)
        if on_epoch_end:
            on_epoch_end(epoch, params)
        if max_iters is not None and it >= max_iters:
            break
    return params, rows


def predict(params: ParamStore, cfg: ModelConfig, images: Tensor4, batch_size: int = 4) -> np.ndarray:
    """Alpha mattes ``(n, 1, H, W)`` for a stack of images, without recording a tape."""
    out = []
    data = images.data.astype(params.dtype, copy=False)
    for i in range(0, data.shape[0], batch_size):
        out.append(forward(Tensor4(data[i : i + batch_size]), params, cfg).alpha_p.data)
    return np.concatenate(out, axis=0)
