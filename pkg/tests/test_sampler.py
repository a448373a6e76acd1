from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dab import constraints as C
from dab import instrument
from dab.baselines import brute_force_dlp, greedy_decode
from dab.lm.model import LMBundle, LMConfig, init_params, sequence_logits
from dab.metrics import hops
from dab.numeric import make_rng, softmax
from dab.sampler import (
    TRACE_COLUMNS,
    SamplerConfig,
    allowed_sets,
    bias_vectors,
    biased_argmax,
    dlp_distribution,
    dlp_exponents,
    dlp_propose,
    generate_biased,
    normalizer,
    run_dab,
    topk_mask,
    weight_schedule,
    write_trace_csv,
)
from dab.validation import random_bundle, random_classifier

finite = st.floats(-20, 20, allow_nan=False)


# bias vectors, normalizer, argmax, schedule -----------------------------------
def test_bias_vectors_hand_values():
    M = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    np.testing.assert_array_equal(bias_vectors([1], M), [[1.0, 0.0, 5.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bias_vectors_properties(seed):
    r = np.random.default_rng(seed)
    M = r.normal(size=(6, 3))
    M[4] = M[1]
    B = r.integers(6, size=5)
    b = bias_vectors(B, M)
    assert np.all(b >= 0)
    assert np.all(b[np.arange(5), B] == 0.0)
    np.testing.assert_array_equal(b[:, 1], b[:, 4])


@pytest.mark.parametrize("y,b,expected", [
    ([3.0, 4.0], [4.0, 3.0], 1.0),
    ([6.0, 8.0], [2.0, 0.0], 5.0),
    ([1.0, 2.0], [0.0, 0.0], 1.0),
])
def test_normalizer(y, b, expected):
    assert normalizer(np.array(y), np.array(b)) == expected


def test_biased_argmax_examples():
    assert biased_argmax(np.array([1.0, 2.0, 3.0]), np.array([0.0, 0.0, 10.0]), 1.0, 1.0) == 1
    y = np.array([0.3, 2.0, -1.0])
    assert biased_argmax(y, np.array([5.0, 1.0, 9.0]), 0.0, 3.0) == 1
    assert biased_argmax(y, np.array([1e6, 1e6, 0.0]), 10.0, 1.0) == 2


def test_biased_argmax_ties_lowest_index():
    assert biased_argmax(np.array([1.0, 2.0, 2.0]), np.zeros(3), 1.0, 1.0) == 1


def test_weight_schedule():
    assert weight_schedule(1.05, 0, 12) == 1.05
    assert abs(weight_schedule(1.05, 11, 12) - 1.05 / 12) < 1e-15
    assert all(weight_schedule(0.0, t, 5) == 0.0 for t in range(5))
    with pytest.raises(ValueError):
        weight_schedule(1.0, 5, 5)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=finite), arrays(np.float64, 6, elements=st.floats(0.01, 20)),
       st.floats(0.0, 3.0), st.floats(0.1, 50.0))
def test_scale_coupling(y, b, w, c):
    r = normalizer(y, b)
    rc = normalizer(c * y, b)
    assert abs(rc - c * r) <= 1e-9 * max(1.0, c * r)
    base = y - w * r * b
    # skip numerically tied maxima, where rounding may legitimately flip
    top = np.sort(base)[-2:]
    if top[1] - top[0] > 1e-9 * max(1.0, np.abs(base).max()):
        assert biased_argmax(c * y, b, w, rc) == biased_argmax(y, b, w, r)


# generation ---------------------------------------------------------------------
def test_zero_bias_is_greedy(tiny_bundle):
    cfg = SamplerConfig(length=6)
    y, _ = generate_biased(tiny_bundle, (1, 2), np.zeros((6, 8)), cfg)
    assert y == greedy_decode(tiny_bundle, (1, 2), 6)
    assert generate_biased(tiny_bundle, (1, 2), None, cfg)[0] == y


def test_single_position_matches_biased_argmax(tiny_bundle):
    cfg = SamplerConfig(length=1, weight=2.0)
    bias = np.abs(np.random.default_rng(0).normal(size=(1, 8))) * 3
    y, seen = generate_biased(tiny_bundle, (3,), bias, cfg)
    r = normalizer(seen[0], bias[0])
    assert y == (biased_argmax(seen[0], bias[0], 2.0, r),)
    y1, _ = generate_biased(tiny_bundle, (3,), bias, cfg, normalize=False)
    assert y1 == (biased_argmax(seen[0], bias[0], 2.0, 1.0),)


def test_generate_deterministic_and_returns_raw_logits(tiny_bundle):
    cfg = SamplerConfig(length=5)
    bias = np.abs(np.random.default_rng(1).normal(size=(5, 8)))
    a = generate_biased(tiny_bundle, (2,), bias, cfg)
    b = generate_biased(tiny_bundle, (2,), bias, cfg)
    assert a[0] == b[0]
    np.testing.assert_array_equal(a[1], b[1])
    np.testing.assert_allclose(a[1], sequence_logits(tiny_bundle, (2,), a[0]), atol=1e-9)


def test_generate_rejects_bad_bias_shape(tiny_bundle):
    with pytest.raises(ValueError):
        generate_biased(tiny_bundle, (1,), np.zeros((3, 8)), SamplerConfig(length=4))


# top-k and DLP ---------------------------------------------------------------
def test_topk_examples():
    y = np.array([[5.0, 4.0, 3.0, 2.0]])
    assert allowed_sets(topk_mask(y, 2, [3])) == [frozenset({0, 1, 3})]
    y = np.random.default_rng(0).normal(size=(3, 6))
    assert all(s == frozenset(range(6)) for s in allowed_sets(topk_mask(y, 6, [0, 1, 2])))
    sets = allowed_sets(topk_mask(y, 1, [5, 5, 5]))
    assert sets == [frozenset({int(np.argmax(row)), 5}) for row in y]
    with pytest.raises(ValueError):
        topk_mask(y, 7, [0, 0, 0])


def test_dlp_zero_gradient_is_uniform():
    p = dlp_distribution(C.onehot([2, 0], 5), np.zeros((2, 5)), 1.0)
    np.testing.assert_allclose(p, np.full((2, 5), 0.2), atol=1e-15)


def test_dlp_hand_example():
    p = dlp_distribution(C.onehot([2], 3), np.array([[2.0, 1.0, 5.0]]), 1.0)
    np.testing.assert_allclose(p[0], [0.6652409557748219, 0.24472847105479765, 0.09003057317038046], rtol=1e-14)


def test_dlp_singleton_mask_returns_current():
    mask = np.zeros((2, 4), dtype=bool)
    mask[0, 1] = mask[1, 3] = True
    rng = make_rng(0)
    grad = np.random.default_rng(0).normal(size=(2, 4)) * 10
    for _ in range(50):
        assert dlp_propose(C.onehot([1, 3], 4), grad, 0.1, mask, rng) == (1, 3)


def test_dlp_empty_allowed_set_rejected():
    with pytest.raises(ValueError):
        dlp_distribution(C.onehot([0], 3), np.zeros((1, 3)), 1.0, np.zeros((1, 3), dtype=bool))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(1, 4), st.floats(0.05, 5.0), st.integers(0, 10_000))
def test_dlp_distribution_properties(V, n, tau, seed):
    r = np.random.default_rng(seed)
    cur = r.integers(V, size=n)
    grad = r.normal(size=(n, V)) * 3
    onehot = C.onehot(cur, V)
    z = dlp_exponents(onehot, grad, tau)
    assert np.all(z[np.arange(n), cur] == 0.0)
    mask = topk_mask(r.normal(size=(n, V)), int(r.integers(1, V + 1)), cur)
    p = dlp_distribution(onehot, grad, tau, mask)
    assert np.all(p >= 0) and np.all(np.abs(p.sum(1) - 1) < 1e-9)
    assert np.all(p[~mask] == 0.0)
    ref = brute_force_dlp(tuple(cur), grad, tau, [sorted(s) for s in allowed_sets(mask)])
    assert np.max(np.abs(p - ref)) < 1e-9


def test_dlp_unmasked_equals_softmax():
    r = np.random.default_rng(3)
    grad = r.normal(size=(2, 5))
    onehot = C.onehot([1, 4], 5)
    np.testing.assert_allclose(dlp_distribution(onehot, grad, 0.3),
                               softmax(grad * (1 - onehot), 0.3, axis=1), atol=1e-15)


# the loop ---------------------------------------------------------------------
def test_single_sweep_zero_weight_is_greedy(tiny_bundle, tiny_classifier):
    best, trace = run_dab(tiny_bundle, tiny_classifier, (1,), SamplerConfig(steps=1, length=5, weight=0.0))
    assert best == greedy_decode(tiny_bundle, (1,), 5)
    assert len(trace) == 1


def test_flat_constraint_returns_first_iterate(tiny_bundle):
    c = C.constant_constraint(8, 0.0)
    best, trace = run_dab(tiny_bundle, c, (1,), SamplerConfig(steps=6, length=5), make_rng(3))
    assert trace.best_index == 0
    assert best == trace.steps[0].response == greedy_decode(tiny_bundle, (1,), 5)


@pytest.mark.parametrize("seed", range(5))
def test_trace_invariants(tiny_bundle, tiny_classifier, seed):
    cfg = SamplerConfig(steps=12, length=5, tau=0.5, topk=4)
    best, trace = run_dab(tiny_bundle, tiny_classifier, (2, 3), cfg, make_rng(seed))
    bests = [s.best_f for s in trace.steps]
    assert bests == sorted(bests)
    assert trace.best.f_value == max(s.f_value for s in trace.steps)
    assert best == trace.best.response
    assert trace.steps[0].hops == 0
    for prev, cur in zip(trace.steps, trace.steps[1:]):
        assert cur.hops == hops(prev.response, cur.response)
    for s in trace.steps:
        assert s.bias == s.response
        assert len(s.proposed_bias) == 5
        assert s.f_value == C.value_tokens(tiny_classifier, s.response, (2, 3))


@pytest.mark.parametrize("n", [4, 8, 16])
def test_cost_contract(n):
    cfg = LMConfig(vocab_size=8, d_model=16, n_layers=1, n_heads=2, context=24)
    bundle = LMBundle(random_bundle().vocabulary, cfg, init_params(cfg, make_rng(0), 0.5))
    clf = random_classifier(bundle.embeddings)
    _, trace = run_dab(bundle, clf, (1,), SamplerConfig(steps=3, length=n), make_rng(0))
    for s in trace.steps:
        assert s.lm_forward_count == n
        assert s.lm_backward_count == 0
        assert s.constraint_backward_count == 1


def test_same_seed_same_trace(tiny_bundle, tiny_classifier):
    cfg = SamplerConfig(steps=8, length=5, tau=0.5)
    a = run_dab(tiny_bundle, tiny_classifier, (1,), cfg, make_rng(9, 2))[1]
    b = run_dab(tiny_bundle, tiny_classifier, (1,), cfg, make_rng(9, 2))[1]
    assert a.responses == b.responses
    assert [s.proposed_bias for s in a.steps] == [s.proposed_bias for s in b.steps]


def test_config_validation():
    for bad in (dict(steps=0), dict(length=0), dict(tau=0.0), dict(weight=-1.0), dict(topk=0)):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)
    assert SamplerConfig().resolved_topk(64) == 64
    assert SamplerConfig().resolved_topk(1000) == 250
    with pytest.raises(ValueError):
        SamplerConfig(topk=9).resolved_topk(8)


def test_trace_csv(tmp_path, tiny_bundle, tiny_classifier):
    _, trace = run_dab(tiny_bundle, tiny_classifier, (1,), SamplerConfig(steps=4, length=3), make_rng(0))
    write_trace_csv(tmp_path / "t.csv", trace, tiny_bundle.vocabulary.tokens, wall_clock=False)
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == TRACE_COLUMNS
    assert len(rows) == 4
    assert all(r["wall_clock_us"] == "0" for r in rows)
    assert rows[2]["response_tokens"] == tiny_bundle.vocabulary.decode(trace.steps[2].response)
    assert rows[2]["bias_tokens"] == tiny_bundle.vocabulary.decode(trace.steps[2].proposed_bias)
    assert float(rows[3]["f_value"]) == trace.steps[3].f_value
