"""Kernel backend selection.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
pure-Python implementations in ``_pykernels`` are used.  Set
``SGMNET_PURE_PYTHON=1`` to force the fallback.
"""
import os

import numpy as np

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("SGMNET_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Unfold ``(n, c, hp, wp)`` into ``(n, c*kh*kw, oh*ow)`` patch columns."""
    return _impl.im2col(np.ascontiguousarray(xp), kh, kw, stride, oh, ow)


def col2im(
    cols: np.ndarray, c: int, hp: int, wp: int, kh: int, kw: int, stride: int, oh: int, ow: int
) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add columns back to a padded image."""
    return _impl.col2im(np.ascontiguousarray(cols), c, hp, wp, kh, kw, stride, oh, ow)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Boolean mask of the largest 4-connected component of a 2-D binary mask.

    Ties go to the component whose first pixel comes first in row-major order.
    An empty mask yields an all-False result.
    """
    return _impl.largest_component(np.ascontiguousarray(mask, dtype=np.uint8))
