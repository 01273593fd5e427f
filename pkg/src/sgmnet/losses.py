"""Semantic, detail and alpha losses and their weighted sum."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor4, absolute, mean, mul, scale, square, sub, sum_all


@dataclass
class LossWeights:
    lambda_s: float = 1.0
    lambda_d: float = 10.0
    lambda_alpha: float = 1.0

    def __post_init__(self):
        for k in ("lambda_s", "lambda_d", "lambda_alpha"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0, got {getattr(self, k)}")


@dataclass
class LossBreakdown:
    l_s: Tensor4
    l_d: Tensor4
    l_alpha: Tensor4  # includes l_c
    l_c: Tensor4
    total: Tensor4

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k).item() for k in ("l_s", "l_d", "l_alpha", "l_c", "total")}


def _same_shape(a: Tensor4, b: Tensor4, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: prediction shape {a.shape} != target shape {b.shape}")


def loss_s(s_po: Tensor4, target: Tensor4) -> Tensor4:
    """Half the mean squared error against the pooled-and-blurred matte."""
    _same_shape(s_po, target, "loss_s")
    return scale(mean(square(sub(s_po, target))), 0.5)


def loss_d(d_p: Tensor4, alpha_g: Tensor4, m_d: Tensor4) -> Tensor4:
    """Mean squared error over the pixels where ``m_d == 1``; 0 for an empty mask."""
    _same_shape(d_p, alpha_g, "loss_d")
    _same_shape(d_p, m_d, "loss_d mask")
    m = m_d.data
    if not np.all((m == 0) | (m == 1)):
        raise ValueError("loss_d: transition mask must be binary")
    count = max(1.0, float(m.sum()))
    return scale(sum_all(mul(square(sub(d_p, alpha_g)), m_d)), 1.0 / count)


def loss_alpha(
    alpha_p: Tensor4,
    alpha_g: Tensor4,
    image: Tensor4,
    fg: Tensor4 | None = None,
    bg: Tensor4 | None = None,
) -> tuple[Tensor4, Tensor4]:
    """Return ``(l1 + l_c, l_c)``; the compositional term is 0 without fg and bg."""
    _same_shape(alpha_p, alpha_g, "loss_alpha")
    if (fg is None) != (bg is None):
        raise ValueError("loss_alpha: pass both fg and bg or neither")
    l1 = mean(absolute(sub(alpha_p, alpha_g)))
    if fg is None:
        l_c = Tensor4.scalar(0.0, alpha_p.dtype)
        return l1, l_c
    _same_shape(fg, image, "loss_alpha fg")
    _same_shape(bg, image, "loss_alpha bg")
    # alpha * fg + (1 - alpha) * bg == bg + alpha * (fg - bg)
    recomposed = bg + mul(alpha_p, Tensor4(fg.data - bg.data))
    l_c = mean(absolute(sub(image, recomposed)))
    return l1 + l_c, l_c


def total_loss(l_s: Tensor4, l_d: Tensor4, l_alpha: Tensor4, l_c: Tensor4, weights: LossWeights) -> LossBreakdown:
    if min(weights.lambda_s, weights.lambda_d, weights.lambda_alpha) < 0:
        raise ValueError(f"loss weights must be >= 0, got {weights}")
    total = (
        scale(l_s, weights.lambda_s) + scale(l_d, weights.lambda_d) + scale(l_alpha, weights.lambda_alpha)
    )
    return LossBreakdown(l_s, l_d, l_alpha, l_c, total)
