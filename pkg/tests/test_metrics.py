from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dab import metrics as MX
from dab.sampler import SamplerTrace, TraceStep

seqs = st.lists(st.integers(0, 5), min_size=1, max_size=10)


def make_trace(responses):
    steps = []
    for i, r in enumerate(responses):
        h = 0 if i == 0 else MX.hops(responses[i - 1], r)
        steps.append(TraceStep(i, tuple(r), tuple(r), tuple(r), 0.0, 0.0, h, 2.0, 0, 0, 0, 0))
    return SamplerTrace(steps, 0)


def test_hops_examples():
    assert MX.hops((1, 2, 3), (1, 2, 3)) == 0
    assert MX.hops((1, 2, 3, 4), (1, 0, 3, 0)) == 2
    with pytest.raises(ValueError):
        MX.hops((1,), (1, 2))


@given(seqs, st.randoms())
def test_hops_symmetric_and_bounded(a, rnd):
    b = [rnd.randint(0, 5) for _ in a]
    assert MX.hops(a, b) == MX.hops(b, a)
    assert 0 <= MX.hops(a, b) <= len(a)


def test_unique_tokens_examples():
    assert MX.unique_tokens(make_trace([(1, 2, 3)]))[0] == (1, 1, 1)
    assert MX.unique_tokens(make_trace([(1, 2)] * 10))[0] == (1, 1)
    counts, mean = MX.unique_tokens(make_trace([(c, 0) for c in [0, 1, 2] * 4]))
    assert counts == (3, 1) and mean == 2.0
    with pytest.raises(ValueError):
        MX.unique_tokens([])


@given(st.lists(st.lists(st.integers(0, 9), min_size=3, max_size=3), min_size=1, max_size=12))
def test_unique_tokens_bounds(responses):
    _, mean = MX.unique_tokens(responses)
    assert 1 <= mean <= min(len(responses), 10)


def test_exploration_skips_first_sweep():
    stats = MX.exploration(make_trace([(0, 0), (1, 1), (1, 0)]))
    assert stats.hops == (0, 2, 1)
    assert stats.mean_hops == 1.5
    assert stats.unique_per_position == (2, 2)


def test_tokens_per_second():
    assert MX.tokens_per_second(20, 50, 100.0) == 10.0
    assert MX.tokens_per_second(20, 50, 200.0) == 5.0
    with pytest.raises(ValueError):
        MX.tokens_per_second(1, 1, 0.0)


def test_satisfaction_rate():
    assert MX.satisfaction_rate([1.0, 2.0], 0.5) == 1.0
    assert MX.satisfaction_rate([1, 1, 1, 0, 0, 0, 0, 0, 0, 0], 1) == 0.3
    assert MX.satisfaction_rate([0.0], 0.0) == 1.0
    with pytest.raises(ValueError):
        MX.satisfaction_rate([], 0.0)


def test_repeated_trigrams():
    assert MX.repeated_trigram_rate((1, 2, 3, 4, 5)) == 0.0
    # trigrams: 123 231 312 123 -> one repeat of four
    assert MX.repeated_trigram_rate((1, 2, 3, 1, 2, 3)) == 0.25
    assert MX.repeated_trigram_rate((1, 2)) == 0.0


@given(st.lists(st.integers(0, 3), max_size=20))
def test_repeated_trigram_range(tokens):
    assert 0.0 <= MX.repeated_trigram_rate(tokens) <= 1.0


def test_mean_stderr_and_report(tmp_path):
    out = MX.mean_stderr([1.0, 2.0, 3.0])
    assert out["mean"] == 2.0 and out["n"] == 3
    assert abs(out["stderr"] - 1.0 / np.sqrt(3)) < 1e-15
    assert MX.mean_stderr([4.0])["stderr"] == 0.0
    with pytest.raises(ValueError):
        MX.mean_stderr([])
    MX.write_report(tmp_path / "m.json", {"b": [1.0], "a": [2.0, 4.0]})
    text = (tmp_path / "m.json").read_text()
    assert list(json.loads(text)) == ["a", "b"]
