# cython: language_level=3
"""Compiled inner loops: patch extraction for convolution and 4-connected labelling."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] xp, int kh, int kw, int stride, int oh, int ow):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    dtype = np.float32 if real is float else np.float64
    out = np.empty((n, c * kh * kw, oh * ow), dtype=dtype)
    cdef real[:, :, ::1] cols = out
    cdef Py_ssize_t b, ch, i, j, y, x, row, base
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for y in range(oh):
                            base = y * ow
                            for x in range(ow):
                                cols[b, row, base + x] = xp[b, ch, i + y * stride, j + x * stride]
    return out


def col2im(real[:, :, ::1] cols, int c, int hp, int wp, int kh, int kw, int stride, int oh, int ow):
    cdef Py_ssize_t n = cols.shape[0]
    dtype = np.float32 if real is float else np.float64
    out = np.zeros((n, c, hp, wp), dtype=dtype)
    cdef real[:, :, :, ::1] xp = out
    cdef Py_ssize_t b, ch, i, j, y, x, row, base
    # kernel offsets outermost so each pixel accumulates in the same order as the numpy path
    with nogil:
        for i in range(kh):
            for j in range(kw):
                for b in range(n):
                    for ch in range(c):
                        row = (ch * kh + i) * kw + j
                        for y in range(oh):
                            base = y * ow
                            for x in range(ow):
                                xp[b, ch, i + y * stride, j + x * stride] += cols[b, row, base + x]
    return out


def largest_component(cnp.uint8_t[:, ::1] mask):
    cdef Py_ssize_t h = mask.shape[0], w = mask.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    queue_arr = np.empty(h * w, dtype=np.intp)
    cdef int[:, ::1] labels = labels_arr
    cdef Py_ssize_t[::1] queue = queue_arr
    cdef Py_ssize_t y, x, p, head, tail, size, py, px
    cdef int label = 0, best_label = 0
    cdef Py_ssize_t best_size = 0
    with nogil:
        for y in range(h):
            for x in range(w):
                if mask[y, x] == 0 or labels[y, x] != 0:
                    continue
                label += 1
                labels[y, x] = label
                queue[0] = y * w + x
                head = 0
                tail = 1
                while head < tail:
                    p = queue[head]
                    head += 1
                    py = p // w
                    px = p - py * w
                    if py > 0 and mask[py - 1, px] != 0 and labels[py - 1, px] == 0:
                        labels[py - 1, px] = label
                        queue[tail] = p - w
                        tail += 1
                    if py < h - 1 and mask[py + 1, px] != 0 and labels[py + 1, px] == 0:
                        labels[py + 1, px] = label
                        queue[tail] = p + w
                        tail += 1
                    if px > 0 and mask[py, px - 1] != 0 and labels[py, px - 1] == 0:
                        labels[py, px - 1] = label
                        queue[tail] = p - 1
                        tail += 1
                    if px < w - 1 and mask[py, px + 1] != 0 and labels[py, px + 1] == 0:
                        labels[py, px + 1] = label
                        queue[tail] = p + 1
                        tail += 1
                size = tail
                if size > best_size:
                    best_size = size
                    best_label = label
    if best_label == 0:
        return np.zeros((h, w), dtype=bool)
    return labels_arr == best_label
