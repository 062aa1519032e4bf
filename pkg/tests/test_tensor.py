import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from awnet import tensor as T
from awnet.errors import ShapeError


def test_hadamard_square():
    assert T.hadamard(np.array([1.0, 2, 3]), np.array([1.0, 2, 3])).tolist() == [1, 4, 9]


def test_hadamard_broadcast_expansion():
    out = T.hadamard(np.array([[5.0], [7.0]]), np.array([[1.0, 2, 3]]))
    assert out.tolist() == [[5, 10, 15], [7, 14, 21]]


def test_hadamard_zero_annihilates(rng):
    a = rng.standard_normal((3, 4))
    assert np.array_equal(T.hadamard(a, np.zeros((3, 4))), np.zeros((3, 4)))


def test_hadamard_shape_mismatch():
    with pytest.raises(ShapeError):
        T.hadamard(np.ones((2, 3)), np.ones((3, 2)))


def test_broadcast_shape_rules():
    assert T.broadcast_shape((2, 1, 4), (3, 1)) == (2, 3, 4)
    with pytest.raises(ShapeError):
        T.broadcast_shape((2, 3), (4, 3, 2))


def test_reshape_row_major():
    out = T.reshape(np.arange(1.0, 7).reshape(2, 3), (3, 2))
    assert out.tolist() == [[1, 2], [3, 4], [5, 6]]


def test_reshape_round_trip():
    x = np.arange(4.0)
    assert np.array_equal(T.reshape(T.reshape(x, (1, 4)), (4,)), x)


def test_reshape_preserves_order_into_rank5():
    x = np.arange(36.0).reshape(1, 4, 3, 3)
    y = T.reshape(x, (1, 2, 2, 3, 3))
    for c in range(4):
        assert np.array_equal(y[0, c // 2, c % 2], x[0, c])


def test_reshape_size_mismatch():
    with pytest.raises(ShapeError):
        T.reshape(np.ones(6), (4, 2))


def test_unsqueeze_and_expand():
    assert T.unsqueeze(np.ones((2, 2)), 1).shape == (2, 1, 2)
    out = T.expand(np.array([[3.0], [4.0]]), (2, 3))
    assert out.tolist() == [[3, 3, 3], [4, 4, 4]]


def test_unsqueeze_expand_replicates_per_channel_values():
    v = np.array([1.0, 2.0, 3.0])
    out = T.expand(T.unsqueeze(v, 1), (3, 4))
    for c in range(3):
        assert np.all(out[c] == v[c])


def test_expand_errors():
    with pytest.raises(ShapeError):
        T.expand(np.ones((2, 2)), (2, 3))  # stretching a non-1 dim
    with pytest.raises(ShapeError):
        T.unsqueeze(np.ones((2, 2)), 4)


def test_reduce_mean():
    assert T.reduce_mean(np.array([[1.0, 3], [5, 7]]), (0, 1)).item() == 4.0
    with pytest.raises(ShapeError):
        T.reduce_mean(np.ones((2, 2)), (2,))


def test_add_zero_and_scale_one(rng):
    x = rng.standard_normal((3, 5))
    assert np.array_equal(T.add(x, np.zeros_like(x)), x)
    assert np.array_equal(T.scale(x, 1), x)


def test_as_tensor_validation():
    assert T.as_tensor(3.0).shape == (1,)
    with pytest.raises(ShapeError):
        T.as_tensor(np.ones((0, 3)))
    with pytest.raises(TypeError):
        T.resolve_dtype(np.int32)


shapes = hnp.array_shapes(min_dims=1, max_dims=4, max_side=4)


@given(hnp.arrays(np.float64, shapes, elements=st.floats(-1e3, 1e3)))
def test_reshape_round_trip_property(x):
    flat = T.reshape(x, (x.size,))
    assert np.array_equal(T.reshape(flat, x.shape), x)


ints = st.integers(-50, 50).map(float)


@given(hnp.arrays(np.float64, (3, 4), elements=ints), hnp.arrays(np.float64, (3, 4), elements=ints),
       hnp.arrays(np.float64, (3, 4), elements=ints))
def test_hadamard_commutative_associative_on_integers(a, b, c):
    assert np.array_equal(T.hadamard(a, b), T.hadamard(b, a))
    assert np.array_equal(T.hadamard(T.hadamard(a, b), c), T.hadamard(a, T.hadamard(b, c)))


@given(hnp.arrays(np.float64, (2, 1, 3), elements=st.floats(-1e300, 1e300)), st.integers(1, 9))
def test_expand_then_mean_recovers_source(x, r):
    e = T.expand(x, (2, r, 3))
    assert np.array_equal(T.reduce_mean(e, (1,), keepdims=True), x)
    assert np.array_equal(T.reduce_mean(e, (1,)), x[:, 0])
