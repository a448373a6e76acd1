from __future__ import annotations

import numpy as np

from dab import constraints as C
from dab import validation as VAL


def test_all_checks_pass():
    results = VAL.run_checks()
    assert [r.name for r in results] == [
        "dlp_exact", "dlp_empirical", "classifier_gradient", "keyword_gradient",
        "lm_cache", "joint_normalization", "oracle_cap", "greedy_equivalence"]
    assert all(r.ok for r in results), [r for r in results if not r.ok]


def test_mutated_gradient_is_caught():
    wrong = lambda c, b, p: 1.01 * C.gradient(c, b, p)
    failed = {r.name for r in VAL.run_checks(wrong) if not r.ok}
    assert failed == {"classifier_gradient", "keyword_gradient"}


def test_crashing_gradient_counts_as_failure():
    def boom(c, b, p):
        raise RuntimeError("no gradient")
    failed = {r.name for r in VAL.run_checks(boom) if not r.ok}
    assert "classifier_gradient" in failed


def test_relative_error():
    assert VAL.relative_error(np.array([3.0, 4.0]), np.array([3.0, 4.0])) == 0.0
    assert abs(VAL.relative_error(np.array([3.0, 5.0]), np.array([3.0, 4.0])) - 0.2) < 1e-15


def test_random_relaxed_rows_on_simplex():
    b = VAL.random_relaxed(np.random.default_rng(0), 5, 7)
    assert b.shape == (5, 7) and np.all(b >= 0)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
