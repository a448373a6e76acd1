"""Dense kernels shared by the sampler, the LM and the oracles.

Everything is float64. Random numbers come from a counter-based Philox
stream so that each chain owns an independent, reproducible generator.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

PROB_TOL = 1e-9


class InputValidationError(ValueError):
    """Raised when a numeric kernel receives malformed input."""


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Return a Philox generator keyed by ``(seed, stream)``.

    Distinct streams are statistically independent, so chain ``c`` of a run
    can be reproduced without replaying chains ``0..c-1``.
    """
    if seed < 0 or stream < 0:
        raise InputValidationError("seed and stream must be non-negative")
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream)])
    return np.random.Generator(np.random.Philox(seq))


def _as_finite(v, name: str = "input") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InputValidationError(f"{name} contains non-finite entries")
    return arr


def softmax(v, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    if not temperature > 0:
        raise InputValidationError(f"temperature must be positive, got {temperature}")
    z = _as_finite(v) / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    if not temperature > 0:
        raise InputValidationError(f"temperature must be positive, got {temperature}")
    z = _as_finite(v) / temperature
    z = z - np.max(z, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def validate_probs(p) -> np.ndarray:
    arr = _as_finite(p, "probabilities")
    if arr.ndim != 1 or arr.size == 0:
        raise InputValidationError("probabilities must be a non-empty vector")
    if np.any(arr < 0):
        raise InputValidationError("probabilities must be non-negative")
    if abs(arr.sum() - 1.0) > PROB_TOL:
        raise InputValidationError(f"probabilities sum to {arr.sum()!r}, not 1")
    return arr


def sample_categorical(p, rng: np.random.Generator) -> int:
    """Draw one index by inverting the CDF at a single uniform variate."""
    arr = validate_probs(p)
    cdf = np.cumsum(arr)
    u = rng.random()
    idx = int(np.searchsorted(cdf, u, side="right"))
    # u can land above cdf[-1] when the cumulative sum rounds below 1
    last = int(np.flatnonzero(arr)[-1])
    return min(idx, last)


def l2_norm(v) -> float:
    return float(np.sqrt(np.sum(np.square(_as_finite(v)))))


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x, h: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a matrix."""
    if not 1e-6 <= h <= 1e-3:
        raise InputValidationError(f"step h={h} outside [1e-6, 1e-3]")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = float(f(x))
        flat[k] = orig - h
        down = float(f(x))
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * h)
    return grad


def sample_categorical_rows(P, rng: np.random.Generator) -> np.ndarray:
    """Row-wise :func:`sample_categorical` using one uniform draw per row."""
    P = _as_finite(P, "probabilities")
    if P.ndim != 2 or P.shape[1] == 0:
        raise InputValidationError("expected a matrix of row distributions")
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=1) - 1.0) > PROB_TOL):
        raise InputValidationError("each row must be a probability vector")
    cdf = np.cumsum(P, axis=1)
    u = rng.random(P.shape[0])
    idx = (cdf <= u[:, None]).sum(axis=1)
    last = P.shape[1] - 1 - np.argmax(P[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last)
