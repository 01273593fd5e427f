import numpy as np
import pytest

from oracles import flood_largest
from sgmnet import _pykernels, kernels

try:
    from sgmnet import _ckernels
except ImportError:  # extension not built
    _ckernels = None

needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (5, 2), (1, 1)])
def test_im2col_col2im_adjoint(rng, dtype, k, stride):
    xp = rng.standard_normal((2, 3, 11, 10)).astype(dtype)
    oh, ow = (11 - k) // stride + 1, (10 - k) // stride + 1
    cols = kernels.im2col(xp, k, k, stride, oh, ow)
    g = rng.standard_normal(cols.shape).astype(dtype)
    back = kernels.col2im(g, 3, 11, 10, k, k, stride, oh, ow)
    # <im2col(x), g> == <x, col2im(g)>
    lhs = np.vdot(cols.astype(np.float64), g.astype(np.float64))
    rhs = np.vdot(xp.astype(np.float64), back.astype(np.float64))
    assert lhs == pytest.approx(rhs, rel=1e-4 if dtype == np.float32 else 1e-12)


@needs_ext
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("k,stride", [(3, 1), (3, 2), (5, 1)])
def test_backends_bit_identical(rng, dtype, k, stride):
    xp = rng.standard_normal((2, 4, 12, 9)).astype(dtype)
    oh, ow = (12 - k) // stride + 1, (9 - k) // stride + 1
    a = _pykernels.im2col(xp, k, k, stride, oh, ow)
    b = _ckernels.im2col(xp, k, k, stride, oh, ow)
    assert a.dtype == b.dtype and np.array_equal(a, b)
    g = rng.standard_normal(a.shape).astype(dtype)
    ga = _pykernels.col2im(g, 4, 12, 9, k, k, stride, oh, ow)
    gb = _ckernels.col2im(g, 4, 12, 9, k, k, stride, oh, ow)
    assert ga.tobytes() == gb.tobytes()


@pytest.mark.parametrize("impl", ["python", pytest.param("cython", marks=needs_ext)])
def test_largest_component_matches_flood_fill(impl):
    mod = _pykernels if impl == "python" else _ckernels
    for seed in range(60):
        r = np.random.default_rng(seed)
        mask = r.random((16, 16)) < r.uniform(0.3, 0.7)
        got = mod.largest_component(mask.astype(np.uint8))
        np.testing.assert_array_equal(got, flood_largest(mask))


def test_largest_component_edge_cases():
    assert not kernels.largest_component(np.zeros((4, 4), bool)).any()
    assert kernels.largest_component(np.ones((3, 5), bool)).all()
    # two equal components: the one met first in raster order wins
    m = np.zeros((3, 5), bool)
    m[0, 0] = m[2, 4] = True
    np.testing.assert_array_equal(np.argwhere(kernels.largest_component(m)), [[0, 0]])
    # diagonal neighbours are not 4-connected
    d = np.eye(3, dtype=bool)
    assert kernels.largest_component(d).sum() == 1
