"""Named oracle checks run by ``dab validate``.

Every check builds its own small random instance, so the suite needs no
trained weights. A check returns ``(ok, detail)``; :func:`run_checks`
collects them by name.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import baselines as BL
from . import constraints as C
from .lm.model import LMBundle, LMConfig, PrefixState, init_params, next_logits, sequence_logits
from .lm.vocab import Vocabulary
from .numeric import finite_difference_grad, make_rng
from .sampler import SamplerConfig, allowed_sets, dlp_distribution, dlp_propose, run_dab, topk_mask

GRAD_TOL = 1e-4
PROB_TOL = 1e-9


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||b||, 1e-12)``, Euclidean norms over all entries."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-12))


def random_bundle(seed: int = 0, vocab_size: int = 8, d_model: int = 16, scale: float = 0.5) -> LMBundle:
    vocab = Vocabulary(["<s>"] + [f"t{i}" for i in range(1, vocab_size)])
    cfg = LMConfig(vocab_size=vocab_size, d_model=d_model, n_layers=1, n_heads=2, context=16)
    return LMBundle(vocab, cfg, init_params(cfg, make_rng(seed, 1), scale))


def random_classifier(embeddings: np.ndarray, seed: int = 0, hidden: int = 8) -> C.ClassifierConstraint:
    rng = make_rng(seed, 2)
    d = embeddings.shape[1]
    return C.ClassifierConstraint(
        embeddings,
        w1=rng.normal(0.0, 1.0, size=(d, hidden)),
        b1=rng.normal(0.0, 0.1, size=hidden),
        w2=rng.normal(0.0, 1.0, size=(hidden, 2)),
        b2=rng.normal(0.0, 0.1, size=2),
    )


def random_relaxed(rng: np.random.Generator, n: int, V: int) -> np.ndarray:
    return rng.dirichlet(np.ones(V), size=n)


GradientFn = Callable[[C.Constraint, np.ndarray, tuple], np.ndarray]


def _default_gradient(c, b, prompt):
    return C.gradient(c, b, prompt)


def gradient_check(c: C.Constraint, prompt: tuple, n: int, trials: int, seed: int,
                   gradient_fn: GradientFn = _default_gradient) -> tuple[bool, str]:
    rng = make_rng(seed, 3)
    worst = 0.0
    for _ in range(trials):
        b = random_relaxed(rng, n, c.vocab_size)
        fd = finite_difference_grad(lambda x: C.value(c, x, prompt), b, h=1e-5)
        worst = max(worst, relative_error(gradient_fn(c, b, prompt), fd))
    return worst < GRAD_TOL, f"max relative error {worst:.2e} over {trials} inputs"


def check_dlp_exact(seed: int = 0) -> tuple[bool, str]:
    rng = make_rng(seed, 4)
    worst = 0.0
    for _ in range(20):
        V, n = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        current = tuple(int(t) for t in rng.integers(V, size=n))
        grad = rng.normal(0.0, 1.0, size=(n, V))
        tau = float(rng.uniform(0.1, 2.0))
        mask = topk_mask(rng.normal(size=(n, V)), int(rng.integers(1, V + 1)), current)
        got = dlp_distribution(C.onehot(current, V), grad, tau, mask)
        ref = BL.brute_force_dlp(current, grad, tau, [sorted(s) for s in allowed_sets(mask)])
        worst = max(worst, float(np.max(np.abs(got - ref))))
    return worst < PROB_TOL, f"max abs deviation {worst:.2e}"


def check_dlp_empirical(seed: int = 0, draws: int = 100_000) -> tuple[bool, str]:
    rng = make_rng(seed, 5)
    V, n, tau = 5, 3, 0.5
    current = (0, 3, 1)
    grad = rng.normal(0.0, 1.0, size=(n, V))
    ref = BL.brute_force_dlp(current, grad, tau)
    onehot = C.onehot(current, V)
    counts = np.zeros((n, V))
    draw_rng = make_rng(seed, 6)
    for _ in range(draws):
        counts[np.arange(n), dlp_propose(onehot, grad, tau, None, draw_rng)] += 1
    tv = 0.5 * np.abs(counts / draws - ref).sum(axis=1)
    return bool(np.all(tv < 0.01)), f"per-position TV {np.round(tv, 4).tolist()}"


def check_lm_cache(seed: int = 0) -> tuple[bool, str]:
    bundle = random_bundle(seed)
    rng = make_rng(seed, 7)
    prompt = tuple(int(t) for t in rng.integers(1, 8, size=3))
    response = tuple(int(t) for t in rng.integers(1, 8, size=6))
    full = sequence_logits(bundle, prompt, response)
    state = PrefixState(bundle, prompt)
    worst = 0.0
    for i, tok in enumerate(response):
        worst = max(worst, float(np.max(np.abs(next_logits(bundle, state) - full[i]))))
        state.push(tok)
    return worst < 1e-9, f"max cached-vs-full deviation {worst:.2e}"


def check_joint_normalization(seed: int = 0) -> tuple[bool, str]:
    bundle = random_bundle(seed)
    c = random_classifier(bundle.embeddings, seed)
    table = BL.enumerate_joint(bundle, c, (1, 2), n=2, m=3)
    marginal = table.marginal_b()
    dev = float(np.max(np.abs(marginal - table.closed_form_b())))
    total = abs(float(marginal.sum()) - 1.0)
    return dev < PROB_TOL and total < PROB_TOL, f"marginal deviation {dev:.2e}, |sum-1| {total:.2e}"


def check_oracle_cap(seed: int = 0) -> tuple[bool, str]:
    bundle = random_bundle(seed)
    try:
        BL.enumerate_joint(bundle, C.constant_constraint(8), (), n=8, m=8)
    except BL.OracleCapExceeded as exc:
        return True, f"refused: {exc}"
    return False, "oversized enumeration was not refused"


def check_greedy_equivalence(seed: int = 0) -> tuple[bool, str]:
    bundle = random_bundle(seed)
    c = random_classifier(bundle.embeddings, seed)
    greedy = BL.greedy_decode(bundle, (1,), 5)
    for s in range(5):
        best, _ = run_dab(bundle, c, (1,), SamplerConfig(steps=3, length=5, weight=0.0), make_rng(s))
        if best != greedy:
            return False, f"seed {s}: {best} != greedy {greedy}"
    return True, "w=0 reproduces greedy decoding"


def run_checks(gradient_fn: GradientFn = _default_gradient, seed: int = 0) -> list[CheckResult]:
    """Run every check. ``gradient_fn`` replaces the constraint gradient under test."""
    bundle = random_bundle(seed)
    clf = random_classifier(bundle.embeddings, seed)
    kw = C.KeywordConstraint((2, 5), bundle.config.vocab_size)
    checks: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
        ("dlp_exact", lambda: check_dlp_exact(seed)),
        ("dlp_empirical", lambda: check_dlp_empirical(seed)),
        ("classifier_gradient", lambda: gradient_check(clf, (1, 3), 4, 20, seed, gradient_fn)),
        ("keyword_gradient", lambda: gradient_check(kw, (), 4, 20, seed, gradient_fn)),
        ("lm_cache", lambda: check_lm_cache(seed)),
        ("joint_normalization", lambda: check_joint_normalization(seed)),
        ("oracle_cap", lambda: check_oracle_cap(seed)),
        ("greedy_equivalence", lambda: check_greedy_equivalence(seed)),
    ]
    results = []
    for name, fn in checks:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail))
    return results
