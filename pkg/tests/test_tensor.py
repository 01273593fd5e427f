import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import conv2d_loops, max_grad_error
from sgmnet import tensor as T
from sgmnet.tensor import ShapeError, Tape, Tensor4, backward


def rand(rng, *shape, lo=-1.0, hi=1.0):
    return Tensor4(rng.uniform(lo, hi, shape))


def away_from_zero(rng, *shape):
    # kinks (relu, abs) are excluded from finite-difference checks
    x = rng.uniform(-1, 1, shape)
    return Tensor4(np.where(np.abs(x) < 1e-2, 0.5, x))


# ---------------------------------------------------------------- conv2d

def test_conv_identity_kernel_exact(rng):
    x = rand(rng, 2, 1, 5, 7)
    w = Tensor4(np.ones((1, 1, 1, 1)))
    b = Tensor4(np.zeros((1, 1, 1, 1)))
    out = T.conv2d(x, w, b)
    assert np.array_equal(out.data, x.data)


def test_conv_identity_3x3_multichannel_exact(rng):
    x = rand(rng, 1, 3, 6, 6)
    w = np.zeros((3, 3, 3, 3))
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    out = T.conv2d(x, Tensor4(w), None, padding=1)
    assert np.array_equal(out.data, x.data)


def test_conv_all_ones_center_is_nine():
    x = Tensor4(np.ones((1, 1, 3, 3)))
    w = Tensor4(np.ones((1, 1, 3, 3)))
    out = T.conv2d(x, w, Tensor4(np.zeros((1, 1, 1, 1))), stride=1, padding=1)
    expected = conv2d_loops(x.data, w.data, [0.0], 1, 1)
    assert out.data[0, 0, 1, 1] == 9.0
    np.testing.assert_array_equal(out.data, expected)
    assert out.data[0, 0, 0, 0] == 4.0


def test_conv_zero_input_gives_bias(rng):
    b = Tensor4(np.array([0.3, -1.2]).reshape(1, 2, 1, 1))
    out = T.conv2d(Tensor4(np.zeros((1, 3, 4, 4))), rand(rng, 2, 3, 3, 3), b, padding=1)
    assert np.all(out.data[:, 0] == 0.3) and np.all(out.data[:, 1] == -1.2)


@pytest.mark.parametrize("stride,pad,k", [(1, 0, 1), (1, 1, 3), (2, 1, 3), (2, 2, 5), (3, 0, 3)])
def test_conv_matches_loops(rng, stride, pad, k):
    x = rand(rng, 2, 3, 9, 8)
    w = rand(rng, 4, 3, k, k)
    b = rng.uniform(-1, 1, 4)
    out = T.conv2d(x, w, Tensor4(b.reshape(1, 4, 1, 1)), stride=stride, padding=pad)
    ref = conv2d_loops(x.data, w.data, b, stride, pad)
    assert out.shape == ref.shape
    assert out.shape[2] == (9 + 2 * pad - k) // stride + 1
    np.testing.assert_allclose(out.data, ref, rtol=0, atol=1e-12)


def test_conv_shape_errors(rng):
    with pytest.raises(ShapeError, match=r"\(1, 3, 4, 4\).*\(2, 2, 3, 3\)"):
        T.conv2d(rand(rng, 1, 3, 4, 4), rand(rng, 2, 2, 3, 3))
    with pytest.raises(ShapeError, match="odd"):
        T.conv2d(rand(rng, 1, 3, 4, 4), rand(rng, 2, 3, 2, 2))
    with pytest.raises(ValueError):
        T.conv2d(rand(rng, 1, 3, 4, 4), rand(rng, 2, 3, 3, 3), stride=0)


# ---------------------------------------------------------------- upsample / pooling

@pytest.mark.parametrize("mode", ["nearest", "bilinear"])
def test_upsample_factor_one_identity(rng, mode):
    x = rand(rng, 1, 2, 3, 3)
    assert np.array_equal(T.upsample(x, 1, mode).data, x.data)


@pytest.mark.parametrize("mode", ["nearest", "bilinear"])
@pytest.mark.parametrize("factor", [2, 3, 16])
def test_upsample_constant(mode, factor):
    x = Tensor4(np.full((1, 2, 3, 2), 0.37))
    out = T.upsample(x, factor, mode)
    assert out.shape == (1, 2, 3 * factor, 2 * factor)
    np.testing.assert_allclose(out.data, 0.37, rtol=0, atol=1e-15)


def test_upsample_nearest_blocks():
    x = Tensor4(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
    out = T.upsample(x, 2, "nearest").data[0, 0]
    expected = np.array([[x.data[0, 0, y // 2, xx // 2] for xx in range(4)] for y in range(4)])
    np.testing.assert_array_equal(out, expected)


def test_upsample_bilinear_half_pixel_convention():
    x = Tensor4(np.array([0.0, 1.0]).reshape(1, 1, 1, 2))
    out = T.upsample(x, 2, "bilinear").data[0, 0, 0]
    # output centres at 0.25, 0.75, 1.25, 1.75 in input pixel units (minus 0.5), clamped at edges
    np.testing.assert_allclose(out, [0.0, 0.25, 0.75, 1.0])


def test_upsample_errors(rng):
    with pytest.raises(ValueError):
        T.upsample(rand(rng, 1, 1, 2, 2), 0)


def test_avg_pool_values():
    x = Tensor4(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))
    assert T.avg_pool(x, 2).data.item() == 1.5
    const = Tensor4(np.full((2, 3, 8, 8), -0.25))
    np.testing.assert_array_equal(T.avg_pool(const, 4).data, -0.25)


def test_avg_pool_rejects_indivisible(rng):
    with pytest.raises(ShapeError, match="crop"):
        T.avg_pool(rand(rng, 1, 1, 6, 6), 4)


def test_global_avg_pool():
    x = np.zeros((1, 2, 2, 2))
    x[0, 0] = [[0, 0], [0, 1]]
    x[0, 1] = [[1, 1], [1, 0]]
    out = T.global_avg_pool(Tensor4(x))
    assert out.shape == (1, 2, 1, 1)
    np.testing.assert_array_equal(out.data.ravel(), [x[0, 0].mean(), x[0, 1].mean()])
    np.testing.assert_array_equal(out.data.ravel(), [0.25, 0.75])


# ---------------------------------------------------------------- activations

def test_activation_values():
    assert T.sigmoid(Tensor4.scalar(0.0)).item() == 0.5
    assert T.relu(Tensor4.scalar(-1.0)).item() == 0.0
    assert T.relu(Tensor4.scalar(2.0)).item() == 2.0
    sm = T.channel_softmax(Tensor4(np.full((1, 2, 3, 3), 1.7)))
    np.testing.assert_array_equal(sm.data, 0.5)


def test_softmax_needs_two_channels(rng):
    with pytest.raises(ShapeError):
        T.channel_softmax(rand(rng, 1, 1, 2, 2))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 4, 3, 3), elements=st.floats(-50, 50)))
def test_softmax_normalised(x):
    y = T.channel_softmax(Tensor4(x)).data
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=1), 1.0, rtol=0, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (1, 2, 3, 3), elements=st.floats(-30, 30)))
def test_sigmoid_range(x):
    y = T.sigmoid(Tensor4(x)).data
    assert np.all((y > 0) & (y < 1))


# ---------------------------------------------------------------- concat

def test_concat_image_and_map_is_six_channels(rng):
    out = T.concat_channels([rand(rng, 1, 3, 4, 4), rand(rng, 1, 3, 4, 4)])
    assert out.shape == (1, 6, 4, 4)


def test_concat_single_is_identity(rng):
    x = rand(rng, 1, 3, 4, 4)
    assert T.concat_channels([x]) is x


def test_concat_mismatch_names_index(rng):
    with pytest.raises(ShapeError, match="input 2"):
        T.concat_channels([rand(rng, 1, 1, 4, 4), rand(rng, 1, 2, 4, 4), rand(rng, 1, 1, 2, 4)])


def test_concat_sum_backward_routes_ones(rng):
    a, b = rand(rng, 2, 1, 3, 3), rand(rng, 2, 2, 3, 3)
    for t in (a, b):
        t.requires_grad = True
    with Tape() as tape:
        loss = T.sum_all(T.concat_channels([a, b]))
    g = backward(tape, loss)
    np.testing.assert_array_equal(g[a], np.ones(a.shape))
    np.testing.assert_array_equal(g[b], np.ones(b.shape))
    assert max_grad_error(lambda a, b: T.sum_all(T.concat_channels([a, b])), [a, b]) < 1e-4


# ---------------------------------------------------------------- backward

def test_backward_sum_gives_ones(rng):
    x = rand(rng, 2, 3, 4, 4)
    x.requires_grad = True
    with Tape() as tape:
        loss = T.sum_all(x)
    np.testing.assert_array_equal(backward(tape, loss)[x], np.ones(x.shape))


def test_backward_half_square_gives_x(rng):
    x = rand(rng, 2, 3, 4, 4)
    x.requires_grad = True
    with Tape() as tape:
        loss = T.scale(T.sum_all(T.square(x)), 0.5)
    np.testing.assert_array_equal(backward(tape, loss)[x], x.data)


def test_backward_requires_scalar(rng):
    x = rand(rng, 1, 1, 2, 2)
    x.requires_grad = True
    with Tape() as tape:
        y = T.relu(x)
    with pytest.raises(ShapeError):
        backward(tape, y)


def test_backward_accumulates_reused_tensor(rng):
    x = rand(rng, 1, 2, 3, 3)
    x.requires_grad = True
    with Tape() as tape:
        loss = T.sum_all(T.mul(x, x))
    np.testing.assert_allclose(backward(tape, loss)[x], 2 * x.data)


def test_tape_records_in_order(rng):
    x = rand(rng, 1, 1, 2, 2)
    x.requires_grad = True
    with Tape() as tape:
        a = T.relu(x)
        b = T.sigmoid(a)
        T.sum_all(b)
    assert [r.out for r in tape.records[:2]] == [a, b]
    assert tape.records[1].inputs == (a,)


def test_no_tape_no_recording(rng):
    x = rand(rng, 1, 1, 2, 2)
    x.requires_grad = True
    y = T.relu(x)
    assert not y.requires_grad


def test_tensor_requires_rank4():
    with pytest.raises(ShapeError):
        Tensor4(np.zeros((2, 2)))


# ---------------------------------------------------------------- finite differences

PRIMITIVES = {
    "conv2d_s1": (lambda x, w, b: T.sum_all(T.square(T.conv2d(x, w, b, 1, 1))), [(2, 3, 6, 6), (4, 3, 3, 3), (1, 4, 1, 1)]),
    "conv2d_s2": (lambda x, w, b: T.sum_all(T.square(T.conv2d(x, w, b, 2, 1))), [(2, 3, 8, 8), (2, 3, 3, 3), (1, 2, 1, 1)]),
    "conv2d_1x1": (lambda x, w, b: T.sum_all(T.square(T.conv2d(x, w, b))), [(2, 4, 4, 4), (3, 4, 1, 1), (1, 3, 1, 1)]),
    "upsample_nearest": (lambda x: T.sum_all(T.square(T.upsample(x, 2, "nearest"))), [(2, 2, 3, 3)]),
    "upsample_bilinear": (lambda x: T.sum_all(T.square(T.upsample(x, 4, "bilinear"))), [(2, 2, 3, 4)]),
    "avg_pool": (lambda x: T.sum_all(T.square(T.avg_pool(x, 2))), [(2, 2, 4, 4)]),
    "global_avg_pool": (lambda x: T.sum_all(T.square(T.global_avg_pool(x))), [(2, 3, 4, 4)]),
    "relu": (lambda x: T.sum_all(T.square(T.relu(x))), [(2, 2, 4, 4)]),
    "sigmoid": (lambda x: T.sum_all(T.square(T.sigmoid(x))), [(2, 2, 4, 4)]),
    "channel_softmax": (lambda x: T.sum_all(T.square(T.channel_softmax(x))), [(2, 3, 4, 4)]),
    "concat": (lambda a, b: T.sum_all(T.square(T.concat_channels([a, b]))), [(2, 1, 3, 3), (2, 2, 3, 3)]),
    "slice": (lambda x: T.sum_all(T.square(T.slice_channels(x, 1, 3))), [(2, 4, 3, 3)]),
    "mul_broadcast": (lambda a, b: T.sum_all(T.square(T.mul(a, b))), [(2, 3, 4, 4), (2, 3, 1, 1)]),
    "add_sub": (lambda a, b: T.sum_all(T.square(T.sub(T.add(a, b), T.scale(b, 3.0)))), [(2, 1, 4, 4), (2, 3, 4, 4)]),
    "abs_mean": (lambda x: T.mean(T.absolute(x)), [(2, 2, 4, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients_finite_difference(name):
    fn, shapes = PRIMITIVES[name]
    worst = 0.0
    for trial in range(20):
        rng = np.random.default_rng([zlib.crc32(name.encode()), trial])
        tensors = [away_from_zero(rng, *s) for s in shapes]
        worst = max(worst, max_grad_error(fn, tensors, max_entries=40, rng=rng))
    assert worst < 1e-4, f"{name}: max relative error {worst:.2e}"


def test_composed_graph_gradient(rng):
    def fn(x, w1, b1, w2):
        h = T.relu(T.conv2d(x, w1, b1, stride=2, padding=1))
        h = T.upsample(h, 2, "bilinear")
        h = T.concat_channels([h, x])
        p = T.channel_softmax(T.conv2d(h, w2, None, padding=1))
        return T.mean(T.square(T.sigmoid(T.avg_pool(p, 2))))

    for trial in range(20):
        r = np.random.default_rng([99, trial])
        ts = [away_from_zero(r, *s) for s in [(2, 4, 8, 8), (3, 4, 3, 3), (1, 3, 1, 1), (2, 7, 3, 3)]]
        assert max_grad_error(fn, ts, max_entries=30, rng=r) < 1e-4


def test_determinism(rng):
    x = rand(rng, 2, 3, 8, 8)
    w = rand(rng, 4, 3, 3, 3)
    a = T.conv2d(x, w, None, 2, 1).data
    b = T.conv2d(x, w, None, 2, 1).data
    assert a.tobytes() == b.tobytes()
