"""Reference arms and exact oracles.

* a continuous-bias sampler: bias vectors live in embedding space, are added
  to the logits through ``b_i @ M.T`` and are moved by noisy gradient ascent,
  where the gradient is backpropagated through the whole autoregressive
  generation with a straight-through argmax;
* greedy decoding of the base model;
* the likelihood-plus-constraint energy;
* exhaustive enumeration of the joint over (response, bias) on tiny spaces.
"""

from __future__ import annotations

import csv
import itertools
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import constraints as C
from . import instrument
from .lm.model import (
    LMBundle,
    PrefixState,
    StepCache,
    greedy_continuation,
    next_logits,
    output_logits,
    perplexity,
    sequence_log_likelihood,
    step_hidden,
)
from .metrics import hops
from .numeric import l2_norm, log_softmax, make_rng
from .sampler import SamplerTrace, TraceStep, bias_vectors, normalizer, weight_schedule

JOINT_CAP = 10**7


class OracleCapExceeded(ValueError):
    """The requested enumeration is larger than the oracle allows."""


def greedy_decode(bundle: LMBundle, prompt: Sequence[int], n: int) -> tuple[int, ...]:
    return greedy_continuation(bundle, prompt, n)


# continuous bias baseline --------------------------------------------------
@dataclass(frozen=True)
class ContinuousBiasState:
    bias: np.ndarray  # (n, d) embedding-space bias
    gamma: float
    sigma: float
    weights: np.ndarray  # per-position w_i

    def __post_init__(self):
        if not np.all(np.isfinite(self.bias)):
            raise ValueError("bias must be finite")
        if self.gamma < 0 or self.sigma < 0:
            raise ValueError("gamma and sigma must be non-negative")


def initial_state(n: int, d: int, gamma: float, sigma: float, weight: float) -> ContinuousBiasState:
    weights = np.array([weight_schedule(weight, t, n) for t in range(n)])
    return ContinuousBiasState(np.zeros((n, d)), gamma, sigma, weights)


def continuous_bias_step(state: ContinuousBiasState, grad: np.ndarray, rng: np.random.Generator) -> ContinuousBiasState:
    """``bias + gamma * grad + eps`` with ``eps ~ N(0, sigma^2 I)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.bias.shape:
        raise ValueError("gradient shape does not match the bias")
    new = state.bias + state.gamma * grad
    if state.sigma > 0:
        new = new + rng.normal(0.0, state.sigma, size=new.shape)
    return replace(state, bias=new)


def _bias_scale(y_logits: np.ndarray, bias_logits: np.ndarray, use_normalizer: bool) -> float:
    if not use_normalizer:
        return 1.0
    return normalizer(y_logits, bias_logits)


def continuous_bias_generate(
    bundle: LMBundle,
    prompt: Sequence[int],
    state: ContinuousBiasState,
    use_normalizer: bool = False,
) -> tuple[int, ...]:
    """Argmax decoding of ``logits + w_i * r_i * (b_i @ M.T)``."""
    M = bundle.embeddings
    lm_state = PrefixState(bundle, prompt)
    out = []
    for i in range(state.bias.shape[0]):
        y = next_logits(bundle, lm_state)
        extra = state.bias[i] @ M.T
        tok = int(np.argmax(y + state.weights[i] * _bias_scale(y, extra, use_normalizer) * extra))
        out.append(tok)
        lm_state.push(tok)
    return tuple(out)


def continuous_bias_gradient(
    bundle: LMBundle,
    constraint: C.Constraint,
    prompt: Sequence[int],
    state: ContinuousBiasState,
    use_normalizer: bool = False,
) -> tuple[tuple[int, ...], float, np.ndarray]:
    """Generate with the graph recorded and backpropagate f to the bias.

    Each position's one-hot is a straight-through argmax of the biased
    logits and feeds the next LM step, so the gradient flows back through
    every earlier position of the generation.
    """
    p, cfg, M = bundle.params, bundle.config, bundle.embeddings
    leaf = ad.Tensor(state.bias, requires_grad=True)
    cache = StepCache(cfg.n_layers)
    h = None
    for tok in [bundle.vocabulary.bos, *prompt]:
        h = step_hidden(p, cfg, M[tok], cache)
    rows, tokens = [], []
    n = state.bias.shape[0]
    for i in range(n):
        instrument.tally(instrument.LM_FORWARD)
        y = output_logits(p, h)
        extra = ad.getitem(leaf, i) @ M.T
        r = _bias_scale(ad.value(y), ad.value(extra), use_normalizer)
        z = y + extra * (state.weights[i] * r)
        hard = ad.straight_through_onehot(z)
        tokens.append(int(np.argmax(ad.value(z))))
        rows.append(ad.reshape(hard, (1, cfg.vocab_size)))
        if i + 1 < n:
            h = step_hidden(p, cfg, hard @ M, cache)
    relaxed = ad.concat(rows, axis=0)
    f = constraint.evaluate(relaxed, prompt)
    instrument.tally(instrument.CONSTRAINT_FORWARD)
    if isinstance(f, ad.Tensor) and f.requires_grad:
        f.backward()
        instrument.tally(instrument.CONSTRAINT_BACKWARD)
        instrument.tally(instrument.LM_BACKWARD)
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(state.bias)
    return tuple(tokens), float(ad.value(f)), grad


@dataclass(frozen=True)
class ContinuousConfig:
    steps: int = 20
    length: int = 12
    gamma: float = 2.0
    sigma: float = 0.05
    weight: float = 1.05
    use_normalizer: bool = False
    seed: int = 0


def run_continuous(
    bundle: LMBundle,
    constraint: C.Constraint,
    prompt: Sequence[int],
    config: ContinuousConfig,
    rng: np.random.Generator | None = None,
) -> tuple[tuple[int, ...], SamplerTrace]:
    rng = make_rng(config.seed) if rng is None else rng
    state = initial_state(config.length, bundle.config.d_model, config.gamma, config.sigma, config.weight)
    trace = SamplerTrace()
    best_f, prev = -np.inf, None
    for step in range(config.steps):
        with instrument.counting() as counts:
            tic = time.perf_counter_ns()
            response, f, grad = continuous_bias_gradient(bundle, constraint, prompt, state, config.use_normalizer)
            if f > best_f:
                best_f, trace.best_index = f, step
            state = continuous_bias_step(state, grad, rng)
            elapsed = time.perf_counter_ns() - tic
        nearest = tuple(int(t) for t in np.argmax(state.bias @ bundle.embeddings.T, axis=1))
        trace.steps.append(TraceStep(
            step=step,
            response=response,
            bias=(),
            proposed_bias=nearest,
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


def run_greedy(bundle: LMBundle, prompt: Sequence[int], steps: int, n: int,
               constraint: C.Constraint | None = None) -> tuple[tuple[int, ...], SamplerTrace]:
    """The unbiased control arm, recorded as a trace of identical sweeps."""
    trace = SamplerTrace(best_index=0)
    with instrument.counting() as counts:
        response = greedy_decode(bundle, prompt, n)
    f = C.value_tokens(constraint, response, prompt) if constraint is not None else 0.0
    ppl = perplexity(bundle, prompt, response)
    for step in range(steps):
        trace.steps.append(TraceStep(
            step=step, response=response, bias=(), proposed_bias=(), f_value=f, best_f=f,
            hops=0, perplexity=ppl, wall_clock_us=0,
            lm_forward_count=counts[instrument.LM_FORWARD] if step == 0 else 0,
            lm_backward_count=0, constraint_backward_count=0,
        ))
    return response, trace


# energy -------------------------------------------------------------------
@dataclass(frozen=True)
class EnergyParams:
    lambda_lm: float = 1.0
    lambda_constraint: float = 1.0


def energy(params: EnergyParams, bundle: LMBundle, constraint: C.Constraint,
           prompt: Sequence[int], response: Sequence[int]) -> float:
    """``lambda_lm * log P(Y | X) + lambda_constraint * f(Y | X)``."""
    total = 0.0
    if params.lambda_lm:
        total += params.lambda_lm * sequence_log_likelihood(bundle, prompt, response)
    if params.lambda_constraint:
        total += params.lambda_constraint * C.value_tokens(constraint, response, prompt)
    return total


# exact joint --------------------------------------------------------------
@dataclass(frozen=True)
class JointTable:
    """Exhaustive weights ``P(Y | X, B) exp(f(B | X))`` on a restricted vocabulary.

    Rows of ``weights`` index responses, columns index bias sequences, both in
    ``itertools.product`` order over ``range(m)``.
    """

    sequences: tuple[tuple[int, ...], ...]
    f_values: np.ndarray
    conditional: np.ndarray  # P(Y | X, B), columns sum to 1
    weights: np.ndarray

    @property
    def z_b(self) -> float:
        return float(np.sum(np.exp(self.f_values)))

    @property
    def z(self) -> float:
        return float(np.sum(self.weights))

    def probabilities(self) -> np.ndarray:
        return self.weights / self.z

    def marginal_b(self) -> np.ndarray:
        return self.probabilities().sum(axis=0)

    def marginal_y(self) -> np.ndarray:
        return self.probabilities().sum(axis=1)

    def closed_form_b(self) -> np.ndarray:
        return np.exp(self.f_values) / self.z_b

    def write_csv(self, path: str | Path) -> None:
        probs = self.probabilities()
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["y_tokens", "b_tokens", "weight", "probability"])
            for yi, y in enumerate(self.sequences):
                for bi, b in enumerate(self.sequences):
                    writer.writerow([" ".join(map(str, y)), " ".join(map(str, b)),
                                     repr(float(self.weights[yi, bi])), repr(float(probs[yi, bi]))])


def _restricted_prefix_logits(bundle: LMBundle, prompt: Sequence[int], n: int, m: int) -> dict[tuple[int, ...], np.ndarray]:
    out: dict[tuple[int, ...], np.ndarray] = {}
    frontier = [((), PrefixState(bundle, prompt))]
    for depth in range(n):
        nxt = []
        for prefix, state in frontier:
            out[prefix] = next_logits(bundle, state)[:m]
            if depth + 1 < n:
                for tok in range(m):
                    child = state.copy()
                    child.push(tok)
                    nxt.append((prefix + (tok,), child))
        frontier = nxt
    return out


def enumerate_joint(
    bundle: LMBundle,
    constraint: C.Constraint,
    prompt: Sequence[int],
    n: int,
    m: int,
    weight: float = 1.05,
    cap: int = JOINT_CAP,
) -> JointTable:
    """Enumerate every (Y, B) in ``range(m)^n x range(m)^n``.

    The conditional of Y given B is the softmax, over the first ``m`` tokens,
    of the biased logits ``y_i - w_i * r_i * bias_i`` used by the sampler.
    """
    V = bundle.config.vocab_size
    if not 1 <= m <= V:
        raise ValueError(f"restricted vocabulary size {m} outside [1, {V}]")
    size = m ** (2 * n)
    if size > cap:
        raise OracleCapExceeded(f"|V|^n * |V|^n = {size} exceeds the cap of {cap}")
    seqs = tuple(itertools.product(range(m), repeat=n))
    f_values = np.array([C.value(constraint, C.onehot(b, V), prompt) for b in seqs])
    if np.max(f_values) > 700:
        raise OverflowError("constraint values too large to exponentiate")
    prefix_logits = _restricted_prefix_logits(bundle, prompt, n, m)
    M = bundle.embeddings
    w = [weight_schedule(weight, t, n) for t in range(n)]
    conditional = np.empty((len(seqs), len(seqs)))
    for bi, b in enumerate(seqs):
        pen = bias_vectors(b, M)[:, :m]
        # log P(y_i | y_<i, B) for every prefix, reused across responses
        cache: dict[tuple[int, ...], np.ndarray] = {}
        for prefix, y in prefix_logits.items():
            i = len(prefix)
            r = normalizer(y, pen[i])
            cache[prefix] = log_softmax(y - w[i] * r * pen[i])
        for yi, y in enumerate(seqs):
            conditional[yi, bi] = math.exp(sum(cache[y[:i]][y[i]] for i in range(n)))
    weights = conditional * np.exp(f_values)[None, :]
    return JointTable(seqs, f_values, conditional, weights)


def brute_force_dlp(current: Sequence[int], grad: np.ndarray, tau: float,
                    allowed: Sequence[Sequence[int]] | None = None) -> np.ndarray:
    """Per-position proposal evaluated entry by entry with scalar math.

    Exponent ``grad[i][j] / tau`` for every candidate except the current
    token, whose exponent is 0; tokens outside ``allowed[i]`` get weight 0.
    """
    grad = np.asarray(grad, dtype=np.float64)
    n, V = grad.shape
    out = np.zeros((n, V))
    for i in range(n):
        cands = range(V) if allowed is None else sorted(set(allowed[i]) | {int(current[i])})
        expo = {j: (0.0 if j == current[i] else float(grad[i, j]) / tau) for j in cands}
        top = max(expo.values())
        weights = {j: math.exp(e - top) for j, e in expo.items()}
        total = math.fsum(weights.values())
        for j, wj in weights.items():
            out[i, j] = wj / total
    return out
