import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gpsocp.kernels import (
    BaseKernelParams,
    CompositeKernel,
    augment,
    base_eval,
    composite_eval,
    cross_matrix,
    gram,
    se_composite,
)

from conftest import random_kernel

finite = st.floats(-5, 5, allow_nan=False)


def test_base_eval_identical_points_give_signal_variance():
    p = BaseKernelParams(np.array([1.0, 1.0]), 2.0)
    assert base_eval(p, [0.3, -1.0], [0.3, -1.0]) == pytest.approx(2.0)


def test_base_eval_unit_distance():
    p = BaseKernelParams(np.array([1.0]), 1.0)
    assert base_eval(p, [0.0], [1.0]) == pytest.approx(math.exp(-0.5))


def test_base_eval_dimension_mismatch():
    p = BaseKernelParams(np.array([1.0, 1.0]), 1.0)
    with pytest.raises(ValueError, match="dimension"):
        base_eval(p, [0.0, 1.0, 2.0], [0.0, 1.0, 2.0])


@pytest.mark.parametrize("ls,s2", [([0.0], 1.0), ([-1.0], 1.0), ([1.0], 0.0), ([np.inf], 1.0)])
def test_base_params_reject_bad_values(ls, s2):
    with pytest.raises(ValueError):
        BaseKernelParams(np.array(ls), s2)


def test_base_params_equality_and_hash():
    a = BaseKernelParams(np.array([1.0, 2.0]), 0.5)
    b = BaseKernelParams(np.array([1.0, 2.0]), 0.5)
    c = BaseKernelParams(np.array([1.0, 2.5]), 0.5)
    assert a == b and hash(a) == hash(b)
    assert a != c
    assert not a.lengthscales.flags.writeable


def test_composite_with_zero_input_reduces_to_drift_kernel():
    k = se_composite(1, [1.0, 1.0], 1.5)
    x, xp = np.array([0.1, 0.2]), np.array([0.4, -0.3])
    val = composite_eval(k, (x, [1.0, 0.0]), (xp, [1.0, 0.0]))
    assert val == pytest.approx(base_eval(k.base[0], x, xp))


def test_composite_is_bilinear_in_y():
    rng = np.random.default_rng(0)
    k = random_kernel(rng, m=2, dim=3)
    x, xp = rng.normal(size=3), rng.normal(size=3)
    y1, y2, yp = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    a, b = 0.7, -1.3
    lhs = composite_eval(k, (x, a * y1 + b * y2), (xp, yp))
    rhs = a * composite_eval(k, (x, y1), (xp, yp)) + b * composite_eval(k, (x, y2), (xp, yp))
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_composite_rejects_wrong_y_length():
    k = se_composite(1, [1.0], 1.0)
    with pytest.raises(ValueError):
        composite_eval(k, ([0.0], [1.0, 2.0, 3.0]), ([0.0], [1.0, 2.0]))


def test_augment_single_and_batch():
    assert np.array_equal(augment(2.5), [1.0, 2.5])
    assert np.array_equal(augment(np.array([[1.0], [2.0]])), [[1.0, 1.0], [1.0, 2.0]])


def test_gram_matches_pointwise_evaluation():
    rng = np.random.default_rng(1)
    k = random_kernel(rng, m=1, dim=2)
    X = rng.normal(size=(7, 2))
    Y = augment(rng.normal(size=(7, 1)))
    K = gram(k, X, Y)
    ref = np.array([[composite_eval(k, (X[i], Y[i]), (X[j], Y[j])) for j in range(7)] for i in range(7)])
    assert np.allclose(K, ref, atol=1e-13)
    assert np.array_equal(K, K.T)


def test_cross_matrix_shape_and_empty():
    k = se_composite(1, [1.0, 1.0])
    assert cross_matrix(k, [0.0, 0.0], np.zeros((0, 2)), np.zeros((0, 2))).shape == (2, 0)
    Kbar = cross_matrix(k, [0.0, 0.0], np.ones((4, 2)), augment(np.arange(4.0)[:, None]))
    assert Kbar.shape == (2, 4)


def test_cross_matrix_column_times_y_star_is_kernel_value():
    rng = np.random.default_rng(2)
    k = random_kernel(rng, m=1, dim=2)
    X = rng.normal(size=(5, 2))
    Y = augment(rng.normal(size=(5, 1)))
    xs, ys = rng.normal(size=2), augment(rng.normal())
    Kbar = cross_matrix(k, xs, X, Y)
    for i in range(5):
        assert ys @ Kbar[:, i] == pytest.approx(composite_eval(k, (xs, ys), (X[i], Y[i])), abs=1e-13)


def test_log_params_round_trip():
    rng = np.random.default_rng(3)
    k = random_kernel(rng, m=2, dim=3, region_id=2)
    k2 = CompositeKernel.from_log_params(k.to_log_params(), 3, 3, 2)
    for a, b in zip(k.base, k2.base):
        assert np.allclose(a.lengthscales, b.lengthscales)
        assert a.signal_variance == pytest.approx(b.signal_variance)


def test_dict_round_trip_is_exact():
    rng = np.random.default_rng(4)
    k = random_kernel(rng)
    assert CompositeKernel.from_dict(k.to_dict()) == k


def test_mismatched_base_dimensions_rejected():
    with pytest.raises(ValueError):
        CompositeKernel((BaseKernelParams(np.ones(1), 1.0), BaseKernelParams(np.ones(2), 1.0)))


@given(st.integers(0, 10_000), st.integers(2, 40))
def test_gram_is_positive_semidefinite(seed, n):
    rng = np.random.default_rng(seed)
    k = random_kernel(rng, m=int(rng.integers(1, 3)), dim=2)
    X = rng.uniform(-3, 3, size=(n, 2))
    Y = augment(rng.uniform(-3, 3, size=(n, k.n_outputs - 1)))
    K = gram(k, X, Y)
    assert np.min(np.linalg.eigvalsh(K)) >= -1e-8 * np.trace(K) / n


@given(finite, finite, finite, finite)
def test_composite_is_symmetric(x, xp, u, up):
    k = se_composite(1, [1.3], 0.8)
    a = composite_eval(k, ([x], [1.0, u]), ([xp], [1.0, up]))
    b = composite_eval(k, ([xp], [1.0, up]), ([x], [1.0, u]))
    assert a == pytest.approx(b, rel=1e-14, abs=1e-300)
