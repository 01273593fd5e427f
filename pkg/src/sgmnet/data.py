"""Compositing, supervision targets, synthetic portraits and the dataset directory layout."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imageio import read_image, to_uint8, write_image
from .tensor import ShapeError, Tensor4

log = logging.getLogger(__name__)


@dataclass
class MattingSample:
    image: Tensor4  # (1, 3, H, W)
    alpha: Tensor4  # (1, 1, H, W)
    fg: Tensor4 | None = None
    bg: Tensor4 | None = None
    id: str = ""


# --------------------------------------------------------------------------
# compositing

def composite(fg, bg, alpha):
    """Linear blend ``alpha * fg + (1 - alpha) * bg``.

    Accepts Tensor4 or arrays; ``alpha`` broadcasts over the colour channels.
    """
    f, b, a = (x.data if isinstance(x, Tensor4) else np.asarray(x, dtype=np.float64) for x in (fg, bg, alpha))
    for label, arr in (("fg", f), ("bg", b), ("alpha", a)):
        if arr.size and (arr.min() < 0 or arr.max() > 1):
            raise ValueError(f"composite: {label} has values outside [0, 1]")
    if f.shape != b.shape:
        raise ShapeError(f"composite: fg shape {f.shape} != bg shape {b.shape}")
    try:
        out = a * f + (1 - a) * b
    except ValueError:
        raise ShapeError(f"composite: alpha shape {a.shape} does not broadcast to {f.shape}") from None
    out = np.clip(out, 0.0, 1.0)
    return Tensor4(out) if isinstance(fg, Tensor4) else out


# --------------------------------------------------------------------------
# supervision targets

def _gaussian_taps(sigma: float, size: int) -> np.ndarray:
    r = size // 2
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float = 1.0, size: int = 5) -> np.ndarray:
    """Separable blur over the last two axes with edge-inclusive reflection.

    Edge-inclusive reflection (``d c b a | a b c d``) with a symmetric kernel is a
    doubly stochastic operator, so the image mean is preserved.
    """
    taps = _gaussian_taps(sigma, size)
    r = size // 2
    pad = [(0, 0)] * (img.ndim - 2)
    out = np.pad(img, pad + [(r, r), (0, 0)], mode="symmetric")
    out = np.tensordot(sliding_window_view(out, size, axis=-2), taps, axes=([-1], [0]))
    out = np.pad(out, pad + [(0, 0), (r, r)], mode="symmetric")
    out = np.tensordot(sliding_window_view(out, size, axis=-1), taps, axes=([-1], [0]))
    return out


def semantic_target(alpha_g, factor: int = 16, sigma: float = 1.0, size: int = 5) -> Tensor4:
    """Coarse target for the semantic head: mean-pool by ``factor``, then blur."""
    a = alpha_g.data if isinstance(alpha_g, Tensor4) else np.asarray(alpha_g, dtype=np.float64)
    n, c, h, w = a.shape
    if h % factor or w % factor:
        raise ShapeError(f"semantic_target: {h}x{w} matte not divisible by {factor}")
    pooled = a.reshape(n, c, h // factor, factor, w // factor, factor).mean(axis=(3, 5))
    out = np.clip(gaussian_blur(pooled, sigma, size), 0.0, 1.0)
    return Tensor4(out.astype(a.dtype))


def _window_reduce(mask: np.ndarray, r: int, fill: bool, reduce) -> np.ndarray:
    k = 2 * r + 1
    pad = [(0, 0)] * (mask.ndim - 2)
    out = np.pad(mask, pad + [(r, r), (0, 0)], constant_values=fill)
    out = reduce(sliding_window_view(out, k, axis=-2), axis=-1)
    out = np.pad(out, pad + [(0, 0), (r, r)], constant_values=fill)
    return reduce(sliding_window_view(out, k, axis=-1), axis=-1)


def dilate(mask: np.ndarray, r: int) -> np.ndarray:
    """Binary dilation by a ``(2r+1)``-square over the last two axes; outside counts as 0."""
    return _window_reduce(np.asarray(mask, dtype=bool), r, False, np.any)


def erode(mask: np.ndarray, r: int) -> np.ndarray:
    """Binary erosion by a ``(2r+1)``-square; pixels outside the image count as 1."""
    return _window_reduce(np.asarray(mask, dtype=bool), r, True, np.all)


def transition_mask(alpha_g, band_radius: int = 3) -> Tensor4:
    """Binary unknown-region mask: the morphological band around the 0.5 contour,
    plus every pixel with fractional alpha."""
    if band_radius < 1:
        raise ValueError(f"band_radius must be >= 1, got {band_radius}")
    a = alpha_g.data if isinstance(alpha_g, Tensor4) else np.asarray(alpha_g, dtype=np.float64)
    hard = a > 0.5
    band = dilate(hard, band_radius) & ~erode(hard, band_radius)
    band |= (a > 0) & (a < 1)
    return Tensor4(band.astype(a.dtype))


# --------------------------------------------------------------------------
# synthetic portraits

@dataclass
class SynthConfig:
    seed: int = 0
    count: int = 64
    size: int = 64
    strand_range: tuple[int, int] = (6, 16)
    complexity: int = 3
    backgrounds: tuple[str, ...] = ("flat", "gradient", "noise")

    def __post_init__(self):
        if self.size % 32:
            raise ValueError(f"size must be divisible by 32, got {self.size}")
        if self.count < 0:
            raise ValueError(f"count must be >= 0, got {self.count}")
        lo, hi = self.strand_range
        if not 0 <= lo <= hi:
            raise ValueError(f"bad strand_range {self.strand_range}")
        for b in self.backgrounds:
            if b not in ("flat", "gradient", "noise"):
                raise ValueError(f"unknown background style {b!r}")


def _quantize(x: np.ndarray) -> np.ndarray:
    return to_uint8(x).astype(np.float64) / 255.0


def _smooth_noise(rng, size: int, cells: int) -> np.ndarray:
    coarse = rng.uniform(-1, 1, size=(cells + 1, cells + 1))
    t = np.linspace(0, cells, size)
    i = np.minimum(t.astype(int), cells - 1)
    f = t - i
    rows = coarse[i] * (1 - f)[:, None] + coarse[i + 1] * f[:, None]
    return rows[:, i] * (1 - f)[None, :] + rows[:, i + 1] * f[None, :]


def _blob_alpha(rng, yy, xx, cy, cx, ry, rx, complexity, softness):
    """Soft ellipse with a randomly wobbling radius; edge ramp ``softness`` pixels wide."""
    dy, dx = yy - cy, xx - cx
    theta = np.arctan2(dy / ry, dx / rx)
    wobble = np.ones_like(theta)
    for k in range(2, 2 + complexity):
        wobble += rng.uniform(0, 0.08 / (k - 1)) * np.cos(k * theta + rng.uniform(0, 2 * np.pi))
    rho = np.hypot(dy / ry, dx / rx)
    # approximate signed distance in pixels (positive inside)
    sd = (wobble - rho) * np.sqrt(rx * ry)
    return np.clip(0.5 + sd / softness, 0.0, 1.0)


def _strand_alpha(rng, yy, xx, start, direction, length, width, opacity):
    # quadratic Bezier from start, bending sideways
    bend = rng.normal(0, 0.35) * length
    normal = np.array([-direction[1], direction[0]])
    p0 = start
    p2 = start + direction * length
    p1 = (p0 + p2) / 2 + normal * bend
    t = np.linspace(0, 1, max(8, int(length * 3)))[:, None]
    pts = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
    d = np.full(yy.shape, np.inf)
    for a, b in zip(pts[:-1], pts[1:]):
        ab = b - a
        denom = max(ab @ ab, 1e-12)
        u = np.clip(((yy - a[0]) * ab[0] + (xx - a[1]) * ab[1]) / denom, 0, 1)
        d = np.minimum(d, np.hypot(yy - (a[0] + u * ab[0]), xx - (a[1] + u * ab[1])))
    # coverage of a ``width``-wide line over a unit pixel, tapering towards the tip
    cover = np.clip(width / 2 + 0.5 - d, 0.0, 1.0) * min(width, 1.0)
    return cover * opacity


def _background(rng, style: str, size: int) -> np.ndarray:
    base = rng.uniform([0.05, 0.25, 0.35], [0.45, 0.7, 0.9])  # cool tones
    if style == "flat":
        bg = np.broadcast_to(base[:, None, None], (3, size, size)).copy()
    elif style == "gradient":
        other = rng.uniform([0.05, 0.25, 0.35], [0.45, 0.7, 0.9])
        ang = rng.uniform(0, 2 * np.pi)
        yy, xx = np.mgrid[0:size, 0:size] / (size - 1)
        t = (np.cos(ang) * xx + np.sin(ang) * yy)
        t = (t - t.min()) / max(np.ptp(t), 1e-9)
        bg = base[:, None, None] * (1 - t) + other[:, None, None] * t
    else:
        bg = base[:, None, None] + 0.15 * np.stack([_smooth_noise(rng, size, 6) for _ in range(3)])
    return np.clip(bg, 0.0, 1.0)


def _foreground(rng, size: int, yy) -> np.ndarray:
    skin = rng.uniform([0.7, 0.45, 0.3], [0.95, 0.7, 0.5])  # warm tones
    shade = 1.0 - 0.25 * (yy / size)
    fg = skin[:, None, None] * shade[None] + 0.06 * np.stack([_smooth_noise(rng, size, 8) for _ in range(3)])
    return np.clip(fg, 0.0, 1.0)


def synth_sample(cfg: SynthConfig, index: int) -> MattingSample:
    """Sample ``index`` of the synthetic set; independent of every other index."""
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.size
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64) + 0.5

    head_r = s * rng.uniform(0.14, 0.22)
    cx = s * rng.uniform(0.35, 0.65)
    cy = s * rng.uniform(0.3, 0.45)
    soft = rng.uniform(0.8, 2.0)
    head = _blob_alpha(rng, yy, xx, cy, cx, head_r * rng.uniform(1.0, 1.25), head_r, cfg.complexity, soft)
    torso = _blob_alpha(
        rng, yy, xx, s * rng.uniform(0.95, 1.1), cx + s * rng.normal(0, 0.03),
        s * rng.uniform(0.3, 0.42), s * rng.uniform(0.3, 0.45), cfg.complexity, soft,
    )
    alpha = np.maximum(head, torso)

    n_strands = int(rng.integers(cfg.strand_range[0], cfg.strand_range[1] + 1))
    keep = np.ones_like(alpha)
    for _ in range(n_strands):
        ang = rng.uniform(-np.pi, 0)  # upper half of the head
        direction = np.array([np.sin(ang), np.cos(ang)])
        start = np.array([cy, cx]) + direction * head_r * rng.uniform(0.7, 0.95)
        strand = _strand_alpha(
            rng, yy, xx, start, direction, head_r * rng.uniform(0.5, 1.2),
            rng.uniform(0.3, 0.9), rng.uniform(0.5, 0.95),
        )
        keep *= 1 - strand
    alpha = 1 - (1 - alpha) * keep
    alpha = _quantize(alpha)

    fg = _quantize(_foreground(rng, s, yy))
    style = cfg.backgrounds[int(rng.integers(len(cfg.backgrounds)))]
    bg = _quantize(_background(rng, style, s))
    image = _quantize(alpha[None] * fg + (1 - alpha[None]) * bg)
    return MattingSample(
        image=Tensor4(image[None]),
        alpha=Tensor4(alpha[None, None]),
        fg=Tensor4(fg[None]),
        bg=Tensor4(bg[None]),
        id=f"{index:05d}",
    )


def synth_dataset(cfg: SynthConfig) -> list[MattingSample]:
    return [synth_sample(cfg, i) for i in range(cfg.count)]


# --------------------------------------------------------------------------
# dataset directory: <root>/{image,alpha,fg,bg}/<id>.png + index.txt

def save_dataset(samples, root) -> None:
    root = Path(root)
    for sub in ("image", "alpha", "fg", "bg"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    for s in samples:
        write_image(root / "image" / f"{s.id}.png", s.image)
        write_image(root / "alpha" / f"{s.id}.png", s.alpha)
        if s.fg is not None:
            write_image(root / "fg" / f"{s.id}.png", s.fg)
        if s.bg is not None:
            write_image(root / "bg" / f"{s.id}.png", s.bg)
    (root / "index.txt").write_text("".join(f"{s.id}\n" for s in samples))


def read_index(root) -> list[str]:
    path = Path(root) / "index.txt"
    if not path.exists():
        raise FileNotFoundError(f"{path}: dataset manifest missing")
    return [line.strip() for line in path.read_text().splitlines() if line.strip()]


def load_dataset(root, dtype=np.float64) -> list[MattingSample]:
    root = Path(root)
    out = []
    for sid in read_index(root):
        fg_p, bg_p = root / "fg" / f"{sid}.png", root / "bg" / f"{sid}.png"
        has_fb = fg_p.exists() and bg_p.exists()
        alpha = read_image(root / "alpha" / f"{sid}.png", dtype)
        if alpha.shape[1] != 1:
            raise ShapeError(f"{sid}: alpha matte must be grayscale")
        out.append(
            MattingSample(
                image=read_image(root / "image" / f"{sid}.png", dtype),
                alpha=alpha,
                fg=read_image(fg_p, dtype) if has_fb else None,
                bg=read_image(bg_p, dtype) if has_fb else None,
                id=sid,
            )
        )
    return out
