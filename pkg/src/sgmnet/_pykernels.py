"""Pure-Python/numpy versions of the compiled kernels.

Accumulation order matches ``_ckernels`` so both backends give bit-identical results.
"""
from collections import deque

import numpy as np


def im2col(xp, kh, kw, stride, oh, ow):
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=xp.dtype)
    ystop = stride * (oh - 1) + 1
    xstop = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + ystop : stride, j : j + xstop : stride]
    return cols.reshape(n, c * kh * kw, oh * ow)


def col2im(cols, c, hp, wp, kh, kw, stride, oh, ow):
    n = cols.shape[0]
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    ystop = stride * (oh - 1) + 1
    xstop = stride * (ow - 1) + 1
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + ystop : stride, j : j + xstop : stride] += cols[:, :, i, j]
    return out


def largest_component(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    label = best_label = best_size = 0
    for y0 in range(h):
        for x0 in range(w):
            if not mask[y0, x0] or labels[y0, x0]:
                continue
            label += 1
            labels[y0, x0] = label
            queue = deque([(y0, x0)])
            size = 0
            while queue:
                y, x = queue.popleft()
                size += 1
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                        labels[ny, nx] = label
                        queue.append((ny, nx))
            if size > best_size:
                best_size, best_label = size, label
    if best_label == 0:
        return np.zeros((h, w), dtype=bool)
    return labels == best_label
