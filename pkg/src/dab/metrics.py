"""Exploration, fluency, control and throughput measurements."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


def hops(a: Sequence[int], b: Sequence[int]) -> int:
    """Hamming distance between two equal-length token sequences."""
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(x != y for x, y in zip(a, b))


@dataclass(frozen=True)
class ExplorationStats:
    hops: tuple[int, ...]
    unique_per_position: tuple[int, ...]
    perplexity: tuple[float, ...]

    @property
    def mean_hops(self) -> float:
        # the first sweep has no predecessor
        return float(np.mean(self.hops[1:])) if len(self.hops) > 1 else 0.0

    @property
    def mean_unique(self) -> float:
        return float(np.mean(self.unique_per_position))


def unique_tokens(responses: Sequence[Sequence[int]]) -> tuple[tuple[int, ...], float]:
    """Distinct tokens seen at each position across the iterates, and their mean.

    Accepts a list of responses or anything with a ``responses`` attribute
    (for instance a sampler trace).
    """
    responses = list(getattr(responses, "responses", responses))
    if not responses:
        raise ValueError("trace is empty")
    counts = tuple(len(set(col)) for col in zip(*responses))
    return counts, float(np.mean(counts))


def exploration(trace) -> ExplorationStats:
    counts, _ = unique_tokens(trace)
    return ExplorationStats(
        hops=tuple(s.hops for s in trace.steps),
        unique_per_position=counts,
        perplexity=tuple(s.perplexity for s in trace.steps),
    )


def tokens_per_second(n: int, s: int, elapsed_seconds: float) -> float:
    if not elapsed_seconds > 0:
        raise ValueError("elapsed time must be positive")
    return n * s / elapsed_seconds


@dataclass(frozen=True)
class ThroughputStats:
    tokens_per_second: float
    gradient_seconds_per_sweep: float
    lm_forward: int
    lm_backward: int


def satisfaction_rate(values: Iterable[float], threshold: float) -> float:
    """Fraction of constraint values at or above ``threshold``."""
    values = list(values)
    if not values:
        raise ValueError("satisfaction rate of an empty set is undefined")
    return sum(v >= threshold for v in values) / len(values)


def repeated_trigram_rate(tokens: Sequence[int]) -> float:
    """Trigram occurrences beyond the first of each kind, over all trigrams."""
    grams = [tuple(tokens[i:i + 3]) for i in range(len(tokens) - 2)]
    if not grams:
        return 0.0
    return (len(grams) - len(set(grams))) / len(grams)


def mean_stderr(values: Sequence[float]) -> dict[str, float]:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("no values to aggregate")
    se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "stderr": se, "n": int(arr.size)}


def report(metrics: Mapping[str, Sequence[float]]) -> dict[str, dict[str, float]]:
    return {name: mean_stderr(vals) for name, vals in sorted(metrics.items())}


def write_report(path: str | Path, metrics: Mapping[str, Sequence[float]]) -> dict:
    out = report(metrics)
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out
