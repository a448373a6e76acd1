"""Discrete auto-regressive biasing (Langevin-within-Gibbs decoding).

Each sweep decodes a response with the current bias penalties, scores it,
proposes new bias tokens with one gradient-informed discrete Langevin step
started at the response, and turns those tokens into per-position penalty
vectors of squared embedding distances for the next sweep.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import constraints as C
from . import instrument
from .lm.model import LMBundle, PrefixState, next_logits, perplexity
from .metrics import hops
from .numeric import l2_norm, make_rng, sample_categorical_rows, softmax

DEFAULT_TOPK = 250


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 20
    length: int = 12
    tau: float = 0.1
    topk: int | None = None  # None -> min(|V|, 250)
    weight: float = 1.05
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.length < 1:
            raise ValueError("steps and length must be positive")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")
        if self.topk is not None and self.topk < 1:
            raise ValueError("topk must be positive")

    def resolved_topk(self, vocab_size: int) -> int:
        k = min(vocab_size, DEFAULT_TOPK) if self.topk is None else self.topk
        if k > vocab_size:
            raise ValueError(f"topk={k} exceeds vocabulary size {vocab_size}")
        return k


@dataclass(frozen=True)
class TraceStep:
    step: int
    response: tuple[int, ...]
    bias: tuple[int, ...]           # B, the response copied before the proposal
    proposed_bias: tuple[int, ...]  # B', used for the next sweep's penalties
    f_value: float
    best_f: float
    hops: int
    perplexity: float
    wall_clock_us: int
    lm_forward_count: int
    lm_backward_count: int
    constraint_backward_count: int


@dataclass
class SamplerTrace:
    steps: list[TraceStep] = field(default_factory=list)
    best_index: int = -1

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def best(self) -> TraceStep:
        return self.steps[self.best_index]

    @property
    def responses(self) -> list[tuple[int, ...]]:
        return [s.response for s in self.steps]


# building blocks -----------------------------------------------------------
def bias_vectors(bias_tokens: Sequence[int], embeddings: np.ndarray) -> np.ndarray:
    """Entry (i, j) is the squared distance between embeddings of b_i and v_j."""
    M = np.asarray(embeddings, dtype=np.float64)
    diff = M[np.asarray(bias_tokens, dtype=np.int64)][:, None, :] - M[None, :, :]
    return np.sum(diff * diff, axis=-1)


def normalizer(y_logits: np.ndarray, bias_row: np.ndarray) -> float:
    """Ratio of logit norm to penalty norm; 1 for an all-zero penalty row."""
    denom = l2_norm(bias_row)
    if denom == 0.0:
        return 1.0
    return l2_norm(y_logits) / denom


def biased_argmax(y_logits: np.ndarray, bias_row: np.ndarray, w: float, r: float) -> int:
    # np.argmax returns the first maximum, i.e. lowest index on ties
    return int(np.argmax(np.asarray(y_logits) - w * r * np.asarray(bias_row)))


def weight_schedule(w: float, t: int, length: int) -> float:
    if not 0 <= t < length:
        raise ValueError(f"position {t} outside [0, {length})")
    return w * (1.0 - t / length)


def generate_biased(
    bundle: LMBundle,
    prompt: Sequence[int],
    bias: np.ndarray | None,
    config: SamplerConfig,
    normalize: bool = True,
) -> tuple[tuple[int, ...], np.ndarray]:
    """Greedy decoding against ``logits - w_i * r_i * bias_i``.

    Returns the response and the unbiased logits seen at each position.
    ``normalize=False`` fixes every r_i to 1 (the first sweep).
    """
    n = config.length
    if bias is not None and np.shape(bias) != (n, bundle.config.vocab_size):
        raise ValueError(f"bias matrix must be {n} x {bundle.config.vocab_size}")
    state = PrefixState(bundle, prompt)
    response, seen = [], np.empty((n, bundle.config.vocab_size))
    for i in range(n):
        y = next_logits(bundle, state)
        seen[i] = y
        if bias is None:
            tok = int(np.argmax(y))
        else:
            r = normalizer(y, bias[i]) if normalize else 1.0
            tok = biased_argmax(y, bias[i], weight_schedule(config.weight, i, n), r)
        response.append(tok)
        state.push(tok)
    return tuple(response), seen


def topk_mask(y_logits: np.ndarray, k: int, current: Sequence[int]) -> np.ndarray:
    """Boolean (n, |V|) mask: top-k base-LM tokens per position plus the current one."""
    y_logits = np.asarray(y_logits)
    n, V = y_logits.shape
    if not 1 <= k <= V:
        raise ValueError(f"k={k} outside [1, {V}]")
    mask = np.zeros((n, V), dtype=bool)
    order = np.argsort(-y_logits, axis=1, kind="stable")[:, :k]
    np.put_along_axis(mask, order, True, axis=1)
    mask[np.arange(n), np.asarray(current)] = True
    return mask


def allowed_sets(mask: np.ndarray) -> list[frozenset[int]]:
    return [frozenset(np.flatnonzero(row).tolist()) for row in mask]


def dlp_exponents(current: np.ndarray, grad: np.ndarray, tau: float) -> np.ndarray:
    """(1/tau) * grad * (1 - b_hat); zero at each row's current token."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return (np.asarray(grad) * (1.0 - np.asarray(current))) / tau


def dlp_distribution(current: np.ndarray, grad: np.ndarray, tau: float, mask: np.ndarray | None = None) -> np.ndarray:
    """Per-position categorical proposal as an (n, |V|) row-stochastic matrix."""
    current = np.asarray(current, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != current.shape:
        raise ValueError("gradient and current one-hot must have the same shape")
    z = dlp_exponents(current, grad, tau)
    if mask is None:
        return softmax(z, axis=1)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise ValueError("every position needs a non-empty allowed set")
    z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def dlp_propose(
    current: np.ndarray,
    grad: np.ndarray,
    tau: float,
    mask: np.ndarray | None,
    rng: np.random.Generator,
) -> tuple[int, ...]:
    probs = dlp_distribution(current, grad, tau, mask)
    return tuple(int(t) for t in sample_categorical_rows(probs, rng))


# the full loop ----------------------------------------------------------------
def run_dab(
    bundle: LMBundle,
    constraint: C.Constraint,
    prompt: Sequence[int],
    config: SamplerConfig,
    rng: np.random.Generator | None = None,
) -> tuple[tuple[int, ...], SamplerTrace]:
    """Alternate biased decoding and one DLP step for ``config.steps`` sweeps.

    Returns the response with the highest constraint value over all sweeps
    (earliest on ties) and the per-sweep trace.
    """
    rng = make_rng(config.seed) if rng is None else rng
    V, n = bundle.config.vocab_size, config.length
    k = config.resolved_topk(V)
    M = bundle.embeddings
    bias: np.ndarray | None = None
    trace = SamplerTrace()
    best_f, prev = -np.inf, None
    for step in range(config.steps):
        with instrument.counting() as counts:
            tic = time.perf_counter_ns()
            response, seen = generate_biased(bundle, prompt, bias, config, normalize=step > 0)
            current = C.onehot(response, V)
            f, grad = C.value_and_gradient(constraint, current, prompt)
            if f > best_f:
                best_f, trace.best_index = f, step
            mask = topk_mask(seen, k, response)
            proposed = dlp_propose(current, grad, config.tau, mask, rng)
            bias = bias_vectors(proposed, M)
            elapsed = time.perf_counter_ns() - tic
        trace.steps.append(TraceStep(
            step=step,
            response=response,
            bias=response,
            proposed_bias=proposed,
            f_value=f,
            best_f=best_f,
            hops=0 if prev is None else hops(prev, response),
            perplexity=perplexity(bundle, prompt, response),
            wall_clock_us=elapsed // 1000,
            lm_forward_count=counts[instrument.LM_FORWARD],
            lm_backward_count=counts[instrument.LM_BACKWARD],
            constraint_backward_count=counts[instrument.CONSTRAINT_BACKWARD],
        ))
        prev = response
    return trace.best.response, trace


TRACE_COLUMNS = (
    "step", "f_value", "best_f", "hops", "perplexity", "lm_forward_count",
    "constraint_backward_count", "wall_clock_us", "response_tokens", "bias_tokens",
)


def trace_rows(trace: SamplerTrace, tokens: Sequence[str] | None = None, wall_clock: bool = True):
    def join(seq):
        return " ".join(tokens[t] for t in seq) if tokens is not None else " ".join(map(str, seq))

    for s in trace.steps:
        yield {
            "step": s.step,
            "f_value": repr(s.f_value),
            "best_f": repr(s.best_f),
            "hops": s.hops,
            "perplexity": repr(s.perplexity),
            "lm_forward_count": s.lm_forward_count,
            "constraint_backward_count": s.constraint_backward_count,
            "wall_clock_us": s.wall_clock_us if wall_clock else 0,
            "response_tokens": join(s.response),
            "bias_tokens": join(s.proposed_bias),
        }


def write_trace_csv(path: str | Path, trace: SamplerTrace, tokens: Sequence[str] | None = None,
                    wall_clock: bool = True) -> None:
    """One row per sweep. ``wall_clock=False`` writes 0 timings for byte-stable files."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(trace_rows(trace, tokens, wall_clock))
