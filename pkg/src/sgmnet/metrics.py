"""Matte quality metrics: SAD, MSE, MAD, Grad and Conn.

All metrics run over the whole image.  SAD, Grad and Conn are reported in
thousands (sum / 1000); MSE and MAD are per-pixel means.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .imageio import read_image

METRICS = ("sad", "mse", "mad", "grad", "conn")


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(getattr(pred, "data", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "data", gt), dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"pred shape {p.shape} != gt shape {g.shape}")
    return p, g


def _plane(x: np.ndarray) -> np.ndarray:
    x = np.squeeze(x)
    if x.ndim != 2:
        raise ValueError(f"expected a single-channel matte, got shape {x.shape}")
    return x


def sad(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.abs(p - g).sum() / 1000.0)


def mse(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean((p - g) ** 2))


def mad(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


def gauss_derivative_taps(sigma: float = 1.4) -> tuple[np.ndarray, np.ndarray]:
    """1-D Gaussian and derivative-of-Gaussian taps, truncated at 3 sigma, unit L2 norm."""
    half = int(np.ceil(3 * sigma))
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))
    dg = -x * g / sigma**2
    return g / np.linalg.norm(g), dg / np.linalg.norm(dg)


def _conv1d(img: np.ndarray, taps: np.ndarray, axis: int) -> np.ndarray:
    r = len(taps) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="edge")
    win = np.lib.stride_tricks.sliding_window_view(padded, len(taps), axis=axis)
    return win @ taps[::-1]  # true convolution


def gradient_magnitude(img: np.ndarray, sigma: float = 1.4) -> np.ndarray:
    g, dg = gauss_derivative_taps(sigma)
    if min(img.shape) < len(g):
        raise ValueError(f"matte {img.shape} smaller than the {len(g)}x{len(g)} gradient filter")
    gx = _conv1d(_conv1d(img, dg, axis=1), g, axis=0)
    gy = _conv1d(_conv1d(img, g, axis=1), dg, axis=0)
    return np.sqrt(gx**2 + gy**2)


def grad_metric(pred, gt, sigma: float = 1.4) -> float:
    p, g = _pair(pred, gt)
    p, g = _plane(p), _plane(g)
    diff = gradient_magnitude(p, sigma) - gradient_magnitude(g, sigma)
    return float(np.sum(diff**2) / 1000.0)


def connectivity_levels(pred: np.ndarray, gt: np.ndarray, step: float = 0.1) -> np.ndarray:
    """Per-pixel level ``l_i``: the last threshold at which the pixel was still in the
    largest component of the jointly-thresholded mattes (1 if never dropped)."""
    n = int(np.ceil(1.0 / step - 1e-9))
    levels = [i * step for i in range(n + 1)]
    l_map = np.full(pred.shape, -1.0)
    for i in range(1, len(levels)):
        joint = (pred >= levels[i]) & (gt >= levels[i])
        omega = kernels.largest_component(joint)
        dropped = (l_map == -1) & ~omega
        l_map[dropped] = levels[i - 1]
    l_map[l_map == -1] = 1.0
    return l_map


def conn_metric(pred, gt, step: float = 0.1) -> float:
    if not 0 < step < 1:
        raise ValueError(f"step must be in (0, 1), got {step}")
    p, g = _pair(pred, gt)
    p, g = _plane(p), _plane(g)
    l_map = connectivity_levels(p, g, step)
    pd, gd = p - l_map, g - l_map
    p_phi = 1 - pd * (pd >= 0.15)
    g_phi = 1 - gd * (gd >= 0.15)
    return float(np.sum(np.abs(p_phi - g_phi)) / 1000.0)


def all_metrics(pred, gt) -> dict[str, float]:
    return {
        "sad": sad(pred, gt),
        "mse": mse(pred, gt),
        "mad": mad(pred, gt),
        "grad": grad_metric(pred, gt),
        "conn": conn_metric(pred, gt),
    }


@dataclass
class EvalReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, sid: str, values: dict[str, float]) -> None:
        self.rows.append({"id": sid, **{k: float(values[k]) for k in METRICS}})

    @property
    def aggregate(self) -> dict[str, float]:
        if not self.rows:
            return {k: 0.0 for k in METRICS}
        return {k: float(sum(r[k] for r in self.rows) / len(self.rows)) for k in METRICS}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", *METRICS])
        for r in self.rows:
            w.writerow([r["id"], *(repr(r[k]) for k in METRICS)])
        agg = self.aggregate
        w.writerow(["AGGREGATE", *(repr(agg[k]) for k in METRICS)])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "EvalReport":
        rep = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["id"] != "AGGREGATE":
                    rep.add(row["id"], {k: float(row[k]) for k in METRICS})
        return rep

    def table(self) -> str:
        lines = [f"{'id':<12}" + "".join(f"{k.upper():>12}" for k in METRICS)]
        for r in self.rows:
            lines.append(f"{r['id']:<12}" + "".join(f"{r[k]:>12.4f}" for k in METRICS))
        agg = self.aggregate
        lines.append(f"{'AGGREGATE':<12}" + "".join(f"{agg[k]:>12.4f}" for k in METRICS))
        return "\n".join(lines)


def _ids(directory: Path) -> list[str]:
    return sorted(p.stem for p in directory.glob("*.png"))


def evaluate_dataset(pred_dir, gt_dir) -> EvalReport:
    """Compare ``<pred_dir>/<id>.png`` with ``<gt_dir>/<id>.png`` for every id in ``gt_dir``."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    ids = _ids(gt_dir)
    missing = [i for i in ids if not (pred_dir / f"{i}.png").exists()]
    if missing:
        raise FileNotFoundError(f"predictions missing for ids: {', '.join(missing)}")
    report = EvalReport()
    for sid in ids:
        report.add(sid, all_metrics(read_image(pred_dir / f"{sid}.png"), read_image(gt_dir / f"{sid}.png")))
    return report
