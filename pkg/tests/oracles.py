"""Independent reference implementations used as test oracles.

Nothing here calls into the code paths it checks: loops, brute force and
finite differences only.
"""
from collections import deque

import numpy as np

from sgmnet.tensor import Tape, Tensor4, backward


# ---------------------------------------------------------------- gradients

def analytic_grads(fn, tensors):
    for t in tensors:
        t.requires_grad = True
    with Tape() as tape:
        loss = fn(*tensors)
    grads = backward(tape, loss)
    return [grads.get(t, np.zeros_like(t.data)) for t in tensors]


def numeric_grad(fn, tensors, which, index, eps=1e-4):
    arr = tensors[which].data
    orig = arr[index]
    arr[index] = orig + eps
    up = fn(*tensors).item()
    arr[index] = orig - eps
    down = fn(*tensors).item()
    arr[index] = orig
    return (up - down) / (2 * eps)


def rel_error(a, n, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero entries from dividing by ~0."""
    return abs(a - n) / max(abs(a), abs(n), floor)


def max_grad_error(fn, tensors, eps=1e-4, max_entries=None, rng=None):
    """Largest relative error over (a sample of) all input entries."""
    grads = analytic_grads(fn, tensors)
    worst = 0.0
    for k, t in enumerate(tensors):
        idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(idx) > max_entries:
            pick = (rng or np.random.default_rng(0)).choice(len(idx), max_entries, replace=False)
            idx = [idx[i] for i in pick]
        for i in idx:
            worst = max(worst, rel_error(grads[k][i], numeric_grad(fn, tensors, k, i, eps)))
    return worst


# ---------------------------------------------------------------- tensor ops

def conv2d_loops(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    oc, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for bi in range(n):
        for o in range(oc):
            for y in range(oh):
                for xx in range(ow):
                    acc = b[o] if b is not None else 0.0
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                sy, sx = y * stride + i - pad, xx * stride + j - pad
                                if 0 <= sy < h and 0 <= sx < wd:
                                    acc += x[bi, ci, sy, sx] * w[o, ci, i, j]
                    out[bi, o, y, xx] = acc
    return out


# ---------------------------------------------------------------- morphology

def dilate_loops(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            out[y, x] = any(
                mask[yy, xx]
                for yy in range(max(0, y - r), min(h, y + r + 1))
                for xx in range(max(0, x - r), min(w, x + r + 1))
            )
    return out


def erode_loops(mask, r):
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    for y in range(h):
        for x in range(w):
            out[y, x] = all(
                mask[yy, xx]
                for yy in range(max(0, y - r), min(h, y + r + 1))
                for xx in range(max(0, x - r), min(w, x + r + 1))
            )
    return out


# ---------------------------------------------------------------- metrics

def sad_loops(p, g):
    total = 0.0
    for y in range(p.shape[0]):
        for x in range(p.shape[1]):
            total += abs(p[y, x] - g[y, x])
    return total / 1000.0


def mse_loops(p, g):
    total = 0.0
    for y in range(p.shape[0]):
        for x in range(p.shape[1]):
            total += (p[y, x] - g[y, x]) ** 2
    return total / p.size


def mad_loops(p, g):
    return sad_loops(p, g) * 1000.0 / p.size


def dense_gauss_grad_kernel(sigma=1.4):
    half = int(np.ceil(3 * sigma))
    size = 2 * half + 1
    hx = np.zeros((size, size))
    for i in range(size):
        for j in range(size):
            u, v = i - half, j - half
            gu = np.exp(-u * u / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))
            gv = np.exp(-v * v / (2 * sigma**2)) / (sigma * np.sqrt(2 * np.pi))
            hx[i, j] = gu * (-v * gv / sigma**2)
    return hx / np.sqrt((hx**2).sum())


def conv2d_replicate(img, k):
    h, w = img.shape
    r = k.shape[0] // 2
    out = np.zeros_like(img)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(k.shape[0]):
                for j in range(k.shape[1]):
                    sy = min(max(y - (i - r), 0), h - 1)  # true convolution: flipped offsets
                    sx = min(max(x - (j - r), 0), w - 1)
                    acc += img[sy, sx] * k[i, j]
            out[y, x] = acc
    return out


def grad_dense(p, g, sigma=1.4):
    hx = dense_gauss_grad_kernel(sigma)
    hy = hx.T

    def amp(a):
        return np.sqrt(conv2d_replicate(a, hx) ** 2 + conv2d_replicate(a, hy) ** 2)

    return ((amp(p) - amp(g)) ** 2).sum() / 1000.0


def flood_largest(mask):
    """Largest 4-connected component by breadth-first flood fill; ties -> first in raster order."""
    h, w = mask.shape
    seen = np.zeros((h, w), bool)
    best = []
    for y in range(h):
        for x in range(w):
            if mask[y, x] and not seen[y, x]:
                comp = []
                q = deque([(y, x)])
                seen[y, x] = True
                while q:
                    cy, cx = q.popleft()
                    comp.append((cy, cx))
                    for ny, nx in ((cy + 1, cx), (cy - 1, cx), (cy, cx + 1), (cy, cx - 1)):
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = True
                            q.append((ny, nx))
                if len(comp) > len(best):
                    best = comp
    out = np.zeros((h, w), bool)
    for y, x in best:
        out[y, x] = True
    return out


def conn_reference(p, g, step=0.1):
    levels = np.arange(0, 1 + step, step)
    l_map = -np.ones_like(p)
    for i in range(1, len(levels)):
        omega = flood_largest((p >= levels[i]) & (g >= levels[i]))
        for y in range(p.shape[0]):
            for x in range(p.shape[1]):
                if l_map[y, x] == -1 and not omega[y, x]:
                    l_map[y, x] = levels[i - 1]
    l_map[l_map == -1] = 1
    pd, gd = p - l_map, g - l_map
    p_phi = 1 - pd * (pd >= 0.15)
    g_phi = 1 - gd * (gd >= 0.15)
    return np.sum(np.abs(p_phi - g_phi)) / 1000.0
