"""The matting network: semantic encoder, probability-map module, detail and fusion branches."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from .nn import ParamStore, conv, conv_block, down_stage, se_block, up_stage
from .tensor import (
    ShapeError,
    Tensor4,
    channel_softmax,
    concat_channels,
    repeat_channels,
    sigmoid,
    slice_channels,
    upsample,
)

# ablation rows: (use_fpm, feed_sp_to_detail)
ABLATIONS = {
    "i": (False, True),
    "ii": (True, True),
    "iii": (True, False),
}


@dataclass
class ModelConfig:
    widths: tuple[int, ...] = (16, 32, 64, 128, 128)
    fpm_channels: int = 32
    use_fpm: bool = True
    feed_sp_to_detail: bool = False
    input_size: int = 64
    se_reduction: int = 4
    detail_channels: int = 16
    fusion_channels: int = 16

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 5:
            raise ValueError(f"need 5 encoder widths, got {self.widths}")
        if self.input_size % 32:
            raise ValueError(f"input_size must be divisible by 32, got {self.input_size}")
        if self.widths[-1] % self.se_reduction:
            raise ValueError(
                f"deepest width {self.widths[-1]} not divisible by se_reduction {self.se_reduction}"
            )

    @classmethod
    def for_ablation(cls, row: str, **kw) -> "ModelConfig":
        use_fpm, feed = ABLATIONS[row]
        return cls(use_fpm=use_fpm, feed_sp_to_detail=feed, **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class SemanticOutputs(NamedTuple):
    feats: list  # stage outputs at strides 2, 4, 8, 16, 16 (last one SE-reweighted)
    sp: Tensor4  # deepest reweighted feature
    s_po: Tensor4  # coarse semantic mask, stride 16


@dataclass
class ForwardOutputs:
    s_po: Tensor4
    f_p: Tensor4
    d_p: Tensor4
    alpha_p: Tensor4
    low_level_feats: list = field(default_factory=list)
    sp: Tensor4 | None = None


def _check_input(image: Tensor4) -> None:
    n, c, h, w = image.shape
    if c != 3:
        raise ShapeError(f"expected a 3-channel image, got shape {image.shape}")
    if h % 32 or w % 32:
        raise ShapeError(f"image height and width must be divisible by 32, got {h}x{w}")


def semantic_branch(image: Tensor4, params: ParamStore, cfg: ModelConfig) -> SemanticOutputs:
    _check_input(image)
    w = cfg.widths
    f1 = down_stage(image, params, "sem.stage1", w[0])
    f2 = down_stage(f1, params, "sem.stage2", w[1])
    f3 = down_stage(f2, params, "sem.stage3", w[2])
    f4 = down_stage(f3, params, "sem.stage4", w[3])
    f5 = conv_block(f4, params, "sem.stage5", w[4])
    sp = se_block(f5, params, "sem.se", cfg.se_reduction)
    s_po = sigmoid(conv(sp, params, "sem.head", 1, k=1))
    return SemanticOutputs([f1, f2, f3, f4, sp], sp, s_po)


def fpm_probabilities(feats: list, params: ParamStore, cfg: ModelConfig) -> Tensor4:
    """Two-channel (foreground, background) softmax map at full input resolution."""
    if not cfg.use_fpm:
        raise ValueError("fpm_module called with use_fpm=False; forward() substitutes a constant map")
    ch = cfg.fpm_channels
    proj = [conv_block(f, params, f"fpm.proj{i + 1}", ch, k=1) for i, f in enumerate(feats)]
    # the two deepest features share stride 16
    x = conv_block(concat_channels([proj[4], proj[3]]), params, "fpm.fuse4", ch)
    for i in (2, 1, 0):
        x = up_stage(x, params, f"fpm.fuse{i + 1}", ch, skip=proj[i])
    x = upsample(x, 2, "bilinear")
    return channel_softmax(conv(x, params, "fpm.head", 2, k=1))


def fpm_module(feats: list, params: ParamStore, cfg: ModelConfig) -> Tensor4:
    """Foreground probability map ``f_p`` (channel 0 of :func:`fpm_probabilities`)."""
    return slice_channels(fpm_probabilities(feats, params, cfg), 0, 1)


def detail_branch(
    image: Tensor4,
    f_p: Tensor4 | None,
    low_level: Tensor4,
    params: ParamStore,
    cfg: ModelConfig,
    sp: Tensor4 | None = None,
) -> Tensor4:
    if f_p is None:
        raise ValueError("detail_branch needs a foreground probability map (or the constant substitute)")
    if f_p.shape[1] != 1 or f_p.shape[2:] != image.shape[2:]:
        raise ShapeError(f"f_p shape {f_p.shape} does not match image shape {image.shape}")
    dc = cfg.detail_channels
    i_t = concat_channels([image, repeat_channels(f_p, 3)])
    x = down_stage(i_t, params, "detail.down1", dc)
    e1 = conv_block(concat_channels([x, low_level]), params, "detail.enc1", dc)
    x = down_stage(e1, params, "detail.down2", 2 * dc)
    if cfg.feed_sp_to_detail:
        if sp is None:
            raise ValueError("feed_sp_to_detail=True but no semantic feature given")
        x = concat_channels([x, upsample(sp, x.shape[2] // sp.shape[2], "bilinear")])
    x = up_stage(x, params, "detail.up1", dc, skip=e1)
    x = up_stage(x, params, "detail.up2", dc, skip=i_t)
    return sigmoid(conv(x, params, "detail.out", 1))


def fusion_branch(sp: Tensor4, d_p: Tensor4, params: ParamStore, cfg: ModelConfig) -> Tensor4:
    factor = d_p.shape[2] // sp.shape[2]
    s = upsample(sp, max(factor, 1), "bilinear")
    if s.shape[2:] != d_p.shape[2:] or s.shape[0] != d_p.shape[0]:
        raise ShapeError(f"fusion: upsampled semantics {s.shape} do not match details {d_p.shape}")
    x = concat_channels([s, d_p])
    x = conv_block(x, params, "fusion.conv1", cfg.fusion_channels)
    x = conv_block(x, params, "fusion.conv2", cfg.fusion_channels)
    return sigmoid(conv(x, params, "fusion.out", 1, k=1))


def forward(image: Tensor4, params: ParamStore, cfg: ModelConfig) -> ForwardOutputs:
    sem = semantic_branch(image, params, cfg)
    if cfg.use_fpm:
        f_p = fpm_module(sem.feats, params, cfg)
    else:
        n, _, h, w = image.shape
        f_p = Tensor4(np.full((n, 1, h, w), 0.5, dtype=image.dtype))
    low = sem.feats[0]
    d_p = detail_branch(image, f_p, low, params, cfg, sp=sem.sp)
    alpha_p = fusion_branch(sem.sp, d_p, params, cfg)
    return ForwardOutputs(sem.s_po, f_p, d_p, alpha_p, [low], sem.sp)


def build_params(cfg: ModelConfig, seed: int = 0, dtype=np.float64) -> ParamStore:
    """Materialise every parameter of ``cfg`` with a dry forward pass."""
    params = ParamStore(seed=seed, dtype=dtype)
    forward(Tensor4(np.zeros((1, 3, 32, 32), dtype=dtype)), params, cfg)
    return params


def fpm_param_names(params: ParamStore) -> list[str]:
    return [n for n in params.names() if n.startswith("fpm.")]
