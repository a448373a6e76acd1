"""Differentiable constraints f(B | X) over relaxed one-hot sequences.

A constraint maps an ``n x |V|`` matrix whose rows lie on the simplex (plus
the prompt token ids) to a real score, higher meaning better satisfied.
Gradients are taken with respect to the matrix entries directly; nothing
here touches the language model network, only its embedding table.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import instrument
from .lm.weights import load_weights, save_weights, WeightFileError

log = logging.getLogger(__name__)

CLASSIFIER = "classifier"
KEYWORD = "keyword"
CUSTOM = "custom"


class ConstraintKindError(TypeError):
    """An operation was applied to a constraint of the wrong kind."""


class NotDifferentiableError(NotImplementedError):
    """The constraint has no gradient implementation."""


def onehot(tokens: Sequence[int], vocab_size: int) -> np.ndarray:
    out = np.zeros((len(tokens), vocab_size))
    out[np.arange(len(tokens)), np.asarray(tokens, dtype=np.int64)] = 1.0
    return out


def check_relaxed(b: np.ndarray, vocab_size: int) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 2 or b.shape[1] != vocab_size or b.shape[0] == 0:
        raise ValueError(f"expected an n x {vocab_size} matrix, got shape {b.shape}")
    if np.any(b < 0) or np.any(np.abs(b.sum(axis=1) - 1.0) > 1e-9):
        raise ValueError("rows must be non-negative and sum to 1")
    return b


# constraint handles -------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ClassifierConstraint:
    """Two-class head on mean-pooled embeddings ``mean(b @ M)``.

    ``form="logit_diff"`` scores ``h_+ - h_-``; ``form="log_softmax"`` scores
    ``log softmax(h)_+`` instead. With ``include_prompt`` the prompt
    embeddings join the pool before averaging.
    """

    embeddings: np.ndarray = field(repr=False)
    w1: np.ndarray = field(repr=False)
    b1: np.ndarray = field(repr=False)
    w2: np.ndarray = field(repr=False)
    b2: np.ndarray = field(repr=False)
    target: int = 1
    form: str = "logit_diff"
    include_prompt: bool = True
    kind: str = field(default=CLASSIFIER, init=False)

    def __post_init__(self):
        if self.form not in ("logit_diff", "log_softmax"):
            raise ValueError(f"unknown classifier form {self.form!r}")
        if self.w2.shape[-1] != 2 or self.target not in (0, 1):
            raise ValueError("classifier head must have exactly two output classes")
        for name in ("embeddings", "w1", "b1", "w2", "b2"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def vocab_size(self) -> int:
        return self.embeddings.shape[0]

    def scaled(self, alpha: float) -> ClassifierConstraint:
        """Same head with both output logits multiplied by ``alpha``."""
        return replace(self, w2=self.w2 * alpha, b2=self.b2 * alpha)

    def head_logits(self, pooled):
        hidden = ad.tanh(pooled @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2

    def pooled(self, b, prompt: Sequence[int]):
        rows = b @ self.embeddings
        total = ad.tsum(rows, axis=0)
        count = ad.value(rows).shape[0]
        if self.include_prompt and len(prompt):
            total = total + self.embeddings[np.asarray(prompt)].sum(axis=0)
            count += len(prompt)
        return total * (1.0 / count)

    def pooled_tokens(self, tokens: Sequence[int], prompt: Sequence[int]) -> np.ndarray:
        ids = list(prompt) + list(tokens) if self.include_prompt else list(tokens)
        return self.embeddings[np.asarray(ids)].mean(axis=0)

    def score(self, logits):
        if self.form == "logit_diff":
            return logits[self.target] - logits[1 - self.target]
        return ad.log_softmax(logits)[self.target]

    def evaluate(self, b, prompt: Sequence[int]):
        return self.score(self.head_logits(self.pooled(b, prompt)))


@dataclass(frozen=True, eq=False)
class KeywordConstraint:
    """Soft unigram match: mean over keywords of a smooth max over positions.

    ``temperature * logsumexp_i(b[i, k] / temperature)`` overshoots the hard
    max by at most ``temperature * log(n)``.
    """

    keywords: tuple[int, ...]
    vocab_size: int
    temperature: float = 0.05
    kind: str = field(default=KEYWORD, init=False)

    def __post_init__(self):
        keywords = tuple(int(k) for k in self.keywords)
        if not keywords:
            raise ValueError("keyword set must be non-empty")
        if any(not 0 <= k < self.vocab_size for k in keywords):
            raise ValueError("keyword outside vocabulary")
        if not self.temperature > 0:
            raise ValueError("smoothmax temperature must be positive")
        object.__setattr__(self, "keywords", keywords)

    def slack(self, n: int) -> float:
        return self.temperature * float(np.log(n))

    def evaluate(self, b, prompt: Sequence[int] = ()):
        cols = ad.getitem(b, (slice(None), np.asarray(self.keywords)))
        smooth = ad.logsumexp(cols * (1.0 / self.temperature), axis=0) * self.temperature
        return ad.mean(smooth)


@dataclass(frozen=True, eq=False)
class CustomConstraint:
    """User-supplied constraint.

    ``value_fn(b, prompt)`` must return a float. The gradient comes from
    ``grad_fn(b, prompt)`` when given, otherwise from tracing ``value_fn``
    through :mod:`dab.autodiff` when ``traceable`` is set.
    """

    value_fn: Callable
    vocab_size: int
    grad_fn: Callable | None = None
    traceable: bool = False
    kind: str = field(default=CUSTOM, init=False)

    def evaluate(self, b, prompt: Sequence[int] = ()):
        return self.value_fn(b, prompt)


Constraint = ClassifierConstraint | KeywordConstraint | CustomConstraint


def constant_constraint(vocab_size: int, c: float = 0.0) -> CustomConstraint:
    return CustomConstraint(lambda b, prompt: c, vocab_size,
                            grad_fn=lambda b, prompt: np.zeros(np.shape(b)))


# operations ---------------------------------------------------------------
def classifier_value(c: Constraint, b: np.ndarray, prompt: Sequence[int] = ()) -> float:
    if c.kind != CLASSIFIER:
        raise ConstraintKindError(f"classifier_value on a {c.kind} constraint")
    b = check_relaxed(b, c.vocab_size)
    return float(c.evaluate(b, prompt))


def classifier_value_tokens(c: ClassifierConstraint, tokens: Sequence[int], prompt: Sequence[int] = ()) -> float:
    """Same score computed through an embedding lookup instead of ``b @ M``."""
    if c.kind != CLASSIFIER:
        raise ConstraintKindError(f"classifier_value_tokens on a {c.kind} constraint")
    return float(c.score(c.head_logits(c.pooled_tokens(tokens, prompt))))


def keyword_value(c: Constraint, b: np.ndarray, prompt: Sequence[int] = ()) -> float:
    if c.kind != KEYWORD:
        raise ConstraintKindError(f"keyword_value on a {c.kind} constraint")
    b = check_relaxed(b, c.vocab_size)
    return float(c.evaluate(b, prompt))


def value(c: Constraint, b: np.ndarray, prompt: Sequence[int] = ()) -> float:
    instrument.tally(instrument.CONSTRAINT_FORWARD)
    return float(c.evaluate(np.asarray(b, dtype=np.float64), prompt))


def value_tokens(c: Constraint, tokens: Sequence[int], prompt: Sequence[int] = ()) -> float:
    return value(c, onehot(tokens, c.vocab_size), prompt)


def value_and_gradient(c: Constraint, b: np.ndarray, prompt: Sequence[int] = ()) -> tuple[float, np.ndarray]:
    """Score and its exact gradient with respect to every entry of ``b``."""
    b = np.asarray(b, dtype=np.float64)
    instrument.tally(instrument.CONSTRAINT_FORWARD)
    if c.kind == CUSTOM and not c.traceable:
        if c.grad_fn is None:
            raise NotDifferentiableError("custom constraint has no gradient")
        instrument.tally(instrument.CONSTRAINT_BACKWARD)
        return float(c.value_fn(b, prompt)), np.asarray(c.grad_fn(b, prompt), dtype=np.float64)
    leaf = ad.Tensor(b, requires_grad=True)
    out = c.evaluate(leaf, prompt)
    instrument.tally(instrument.CONSTRAINT_BACKWARD)
    if isinstance(out, ad.Tensor) and out.requires_grad:
        out.backward()
    grad = leaf.grad if leaf.grad is not None else np.zeros_like(b)
    return float(ad.value(out)), grad


def gradient(c: Constraint, b: np.ndarray, prompt: Sequence[int] = ()) -> np.ndarray:
    return value_and_gradient(c, b, prompt)[1]


# classifier training and persistence -------------------------------------
@dataclass(frozen=True)
class ClassifierTrainConfig:
    hidden: int = 32
    steps: int = 400
    batch_size: int = 64
    lr: float = 0.02
    min_window: int = 4
    max_window: int = 16
    init_scale: float = 0.3
    # the synthetic labels are separable, so plain cross-entropy grows the
    # margin without bound; smoothing keeps |f| at a few units
    label_smoothing: float = 0.1


def _windows(corpus, labeler, rng, cfg: ClassifierTrainConfig, count: int):
    xs, ys = [], []
    while len(xs) < count:
        doc = corpus[int(rng.integers(len(corpus)))]
        size = int(rng.integers(cfg.min_window, cfg.max_window + 1))
        start = int(rng.integers(max(len(doc) - size, 0) + 1))
        window = doc[start:start + size]
        label = labeler(window)
        if label is not None:
            xs.append(window)
            ys.append(label)
    return xs, np.asarray(ys)


def train_classifier(
    embeddings: np.ndarray,
    corpus: Sequence[Sequence[int]],
    labeler: Callable[[Sequence[int]], int | None],
    rng: np.random.Generator,
    cfg: ClassifierTrainConfig = ClassifierTrainConfig(),
) -> ClassifierConstraint:
    """Fit the head on labelled corpus windows; the embedding table stays fixed."""
    d = embeddings.shape[1]
    params = {
        "w1": rng.normal(0.0, cfg.init_scale, size=(d, cfg.hidden)),
        "b1": np.zeros(cfg.hidden),
        "w2": rng.normal(0.0, cfg.init_scale / np.sqrt(cfg.hidden), size=(cfg.hidden, 2)),
        "b2": np.zeros(2),
    }
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v = {k: np.zeros_like(v) for k, v in params.items()}
    for step in range(1, cfg.steps + 1):
        xs, ys = _windows(corpus, labeler, rng, cfg, cfg.batch_size)
        pooled = np.stack([embeddings[np.asarray(x)].mean(axis=0) for x in xs])
        leaves = {k: ad.Tensor(p, requires_grad=True) for k, p in params.items()}
        logits = ad.tanh(pooled @ leaves["w1"] + leaves["b1"]) @ leaves["w2"] + leaves["b2"]
        q = np.full((len(ys), 2), cfg.label_smoothing / 2)
        q[np.arange(len(ys)), ys] += 1.0 - cfg.label_smoothing
        loss = -ad.tsum(ad.log_softmax(logits, axis=-1) * q) * (1.0 / len(ys))
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"classifier loss became {loss.data} at step {step}")
        loss.backward()
        lr = cfg.lr * (1.0 - (step - 1) / cfg.steps)
        for k, leaf in leaves.items():
            g = leaf.grad
            m[k] = 0.9 * m[k] + 0.1 * g
            v[k] = 0.999 * v[k] + 0.001 * g * g
            params[k] = params[k] - lr * (m[k] / (1 - 0.9 ** step)) / (np.sqrt(v[k] / (1 - 0.999 ** step)) + 1e-8)
        if step % 100 == 0:
            log.info("classifier step %d loss %.4f", step, float(loss.data))
    return ClassifierConstraint(embeddings, **params)


def save_classifier(path: str | Path, c: ClassifierConstraint, vocabulary: Sequence[str]) -> None:
    config = {"target": c.target, "form": c.form, "include_prompt": c.include_prompt}
    arrays = {"w1": c.w1, "b1": c.b1, "w2": c.w2, "b2": c.b2}
    save_weights(path, "classifier", tuple(vocabulary), config, arrays)


def load_classifier(path: str | Path, embeddings: np.ndarray, vocabulary: Sequence[str] | None = None) -> ClassifierConstraint:
    header, arrays = load_weights(path, "classifier")
    if vocabulary is not None and tuple(header["vocabulary"]) != tuple(vocabulary):
        raise WeightFileError(f"{path}: classifier vocabulary differs from the LM's")
    try:
        return ClassifierConstraint(embeddings, **arrays, **header["config"])
    except (TypeError, ValueError) as exc:
        raise WeightFileError(f"{path}: {exc}") from exc
