from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dab.numeric import (
    InputValidationError,
    finite_difference_grad,
    l2_norm,
    log_softmax,
    make_rng,
    sample_categorical,
    sample_categorical_rows,
    softmax,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)
temps = st.floats(0.05, 20.0)


def test_softmax_uniform():
    np.testing.assert_allclose(softmax([0.0, 0.0, 0.0]), [1 / 3] * 3, atol=1e-15)


def test_softmax_hand_values():
    # 40-digit Decimal evaluation of exp(v)/sum(exp(v))
    expected = [0.6652409557748218895, 0.2447284710547976525, 0.0900305731703804580]
    np.testing.assert_allclose(softmax([2.0, 1.0, 0.0]), expected, rtol=1e-14)


@pytest.mark.parametrize("tau", [0.1, 1.0, 7.0])
def test_softmax_symmetric_pair(tau):
    np.testing.assert_array_equal(softmax([5.0, 5.0], tau), [0.5, 0.5])


def test_softmax_rejects_bad_input():
    with pytest.raises(InputValidationError):
        softmax([0.0, np.nan])
    with pytest.raises(InputValidationError):
        softmax([0.0, np.inf])
    with pytest.raises(InputValidationError):
        softmax([0.0, 1.0], temperature=0.0)


def test_softmax_large_values_stable():
    p = softmax([1000.0, 999.0])
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(), 1.0, atol=1e-12)


@given(vectors, temps)
def test_softmax_is_probvec(v, tau):
    p = softmax(v, tau)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) < 1e-9


@given(vectors, temps, st.floats(-100, 100))
def test_softmax_shift_invariant(v, tau, c):
    np.testing.assert_allclose(softmax(v + c, tau), softmax(v, tau), atol=1e-12)


@given(vectors, temps)
def test_log_softmax_consistent(v, tau):
    np.testing.assert_allclose(np.exp(log_softmax(v, tau)), softmax(v, tau), atol=1e-12)


def test_sample_point_mass():
    rng = make_rng(3)
    assert all(sample_categorical([1.0, 0.0, 0.0], rng) == 0 for _ in range(200))


def test_sample_never_returns_zero_probability_tail():
    rng = make_rng(4)
    assert all(sample_categorical([0.3, 0.7, 0.0], rng) in (0, 1) for _ in range(2000))


def test_sample_fair_coin_frequency():
    rng = make_rng(0)
    draws = [sample_categorical([0.5, 0.5], rng) for _ in range(100_000)]
    assert 0.49 <= draws.count(0) / len(draws) <= 0.51


def test_sample_determinism():
    p = [0.2, 0.3, 0.5]
    a = [sample_categorical(p, make_rng(11)) for _ in range(5)]
    b = [sample_categorical(p, make_rng(11)) for _ in range(5)]
    assert a == b


def test_sample_rejects_degenerate():
    with pytest.raises(InputValidationError):
        sample_categorical([0.5, 0.6], make_rng(0))
    with pytest.raises(InputValidationError):
        sample_categorical([-0.1, 1.1], make_rng(0))


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.integers(0, 2**32))
def test_sample_frequencies_converge(weights, seed):
    p = np.asarray(weights) / np.sum(weights)
    rng = make_rng(seed)
    P = np.tile(p, (100_000, 1))
    counts = np.bincount(sample_categorical_rows(P, rng), minlength=len(p))
    assert np.max(np.abs(counts / 100_000 - p)) < 0.01


def test_rows_sampler_matches_scalar_sampler():
    P = np.array([[0.1, 0.9], [0.6, 0.4], [0.0, 1.0]])
    rows = sample_categorical_rows(P, make_rng(5))
    assert rows.shape == (3,)
    assert rows[2] == 1


def test_stream_independence():
    a = make_rng(1, 0).random(4)
    b = make_rng(1, 1).random(4)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(make_rng(1, 1).random(4), b)


@pytest.mark.parametrize("v,expected", [([3, 4], 5.0), ([0, 0], 0.0), ([1, 1, 1, 1], 2.0)])
def test_l2_norm(v, expected):
    assert l2_norm(v) == expected


def test_fd_linear_and_constant():
    x = np.random.default_rng(0).random((3, 4))
    np.testing.assert_allclose(finite_difference_grad(np.sum, x), np.ones((3, 4)), atol=1e-9)
    np.testing.assert_array_equal(finite_difference_grad(lambda _: 0.0, x), np.zeros((3, 4)))


def test_fd_quadratic_form():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 6))
    x = rng.normal(size=(2, 3))
    f = lambda z: float(z.reshape(-1) @ A @ z.reshape(-1))
    analytic = ((A + A.T) @ x.reshape(-1)).reshape(2, 3)
    fd = finite_difference_grad(f, x)
    assert np.max(np.abs(fd - analytic)) / np.max(np.abs(analytic)) < 1e-6


def test_fd_step_bounds():
    with pytest.raises(InputValidationError):
        finite_difference_grad(np.sum, np.zeros((1, 2)), h=1e-8)
    with pytest.raises(InputValidationError):
        finite_difference_grad(np.sum, np.zeros((1, 2)), h=1e-2)


def test_fd_leaves_input_untouched():
    x = np.arange(6.0).reshape(2, 3)
    before = x.copy()
    finite_difference_grad(lambda z: float(np.sum(z ** 2)), x)
    np.testing.assert_array_equal(x, before)
