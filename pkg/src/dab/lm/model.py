"""Tiny causal transformer with a tied embedding table.

The forward pass is written against :mod:`dab.autodiff`, so the same code
runs on plain arrays (decoding, scoring) and on graph tensors (training and
the continuous baseline's backpropagation through generation).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import autodiff as ad
from .. import instrument
from .vocab import Vocabulary


class ContextOverflowError(ValueError):
    """The requested prefix does not fit in the model's context window."""


@dataclass(frozen=True)
class LMConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context: int = 64
    mlp_mult: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size < 2 or self.context < 2:
            raise ValueError("vocab_size and context must be at least 2")


def param_shapes(cfg: LMConfig) -> dict[str, tuple[int, ...]]:
    d, h = cfg.d_model, cfg.d_model * cfg.mlp_mult
    shapes = {"tok_emb": (cfg.vocab_size, d), "pos_emb": (cfg.context, d)}
    for b in range(cfg.n_layers):
        p = f"b{b}."
        shapes.update({
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "attn.wq": (d, d), p + "attn.wk": (d, d),
            p + "attn.wv": (d, d), p + "attn.wo": (d, d),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
            p + "mlp.w1": (d, h), p + "mlp.b1": (h,),
            p + "mlp.w2": (h, d), p + "mlp.b2": (d,),
        })
    shapes.update({"lnf.g": (d,), "lnf.b": (d,)})
    return shapes


def init_params(cfg: LMConfig, rng: np.random.Generator, scale: float = 0.02) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            params[name] = np.ones(shape)
        elif name.endswith((".b", ".b1", ".b2")):
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(0.0, scale, size=shape)
    return params


def zero_params(cfg: LMConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}


@dataclass(frozen=True, eq=False)
class LMBundle:
    """Immutable vocabulary + configuration + weights."""

    vocabulary: Vocabulary
    config: LMConfig
    params: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        if len(self.vocabulary) != self.config.vocab_size:
            raise ValueError("vocabulary size does not match config")
        expected = param_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) ^ set(self.params))
            raise ValueError(f"parameter names mismatch: {missing}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise ValueError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.flags.writeable = False
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)

    @property
    def embeddings(self) -> np.ndarray:
        return self.params["tok_emb"]


# network ---------------------------------------------------------------
def _split_heads(x, n_heads: int):
    # (..., T, d) -> (..., H, T, d/H)
    shape = ad.value(x).shape
    x = ad.reshape(x, shape[:-1] + (n_heads, shape[-1] // n_heads))
    return ad.swapaxes(x, -2, -3)


def _merge_heads(x):
    x = ad.swapaxes(x, -2, -3)
    shape = ad.value(x).shape
    return ad.reshape(x, shape[:-2] + (shape[-2] * shape[-1],))


def _mlp(p, prefix: str, h):
    m = ad.layer_norm(h, p[prefix + "ln2.g"], p[prefix + "ln2.b"])
    return ad.gelu(m @ p[prefix + "mlp.w1"] + p[prefix + "mlp.b1"]) @ p[prefix + "mlp.w2"] + p[prefix + "mlp.b2"]


def hidden_states(p, cfg: LMConfig, x_emb):
    """Full causal pass over input embeddings of shape (..., T, d)."""
    T = ad.value(x_emb).shape[-2]
    if T > cfg.context:
        raise ContextOverflowError(f"sequence length {T} exceeds context {cfg.context}")
    h = x_emb + ad.getitem(p["pos_emb"], slice(0, T))
    dh = cfg.d_model // cfg.n_heads
    mask = np.triu(np.full((T, T), -1e30), k=1)
    for b in range(cfg.n_layers):
        pre = f"b{b}."
        a = ad.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = _split_heads(a @ p[pre + "attn.wq"], cfg.n_heads)
        k = _split_heads(a @ p[pre + "attn.wk"], cfg.n_heads)
        v = _split_heads(a @ p[pre + "attn.wv"], cfg.n_heads)
        scores = (q @ ad.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(dh)) + mask
        att = ad.softmax(scores, axis=-1)
        h = h + _merge_heads(att @ v) @ p[pre + "attn.wo"]
        h = h + _mlp(p, pre, h)
    return ad.layer_norm(h, p["lnf.g"], p["lnf.b"])


def output_logits(p, h):
    return h @ ad.transpose(p["tok_emb"])


class StepCache:
    """Per-layer key/value rows for incremental decoding."""

    def __init__(self, n_layers: int):
        self.keys: list[list] = [[] for _ in range(n_layers)]
        self.values: list[list] = [[] for _ in range(n_layers)]

    def __len__(self) -> int:
        return len(self.keys[0])


def step_hidden(p, cfg: LMConfig, x_row, cache: StepCache):
    """Process one input embedding row at position ``len(cache)``."""
    t = len(cache)
    if t >= cfg.context:
        raise ContextOverflowError(f"position {t} outside context {cfg.context}")
    h = x_row + ad.getitem(p["pos_emb"], t)
    H, dh = cfg.n_heads, cfg.d_model // cfg.n_heads
    for b in range(cfg.n_layers):
        pre = f"b{b}."
        a = ad.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
        q = ad.reshape(a @ p[pre + "attn.wq"], (H, 1, dh))
        cache.keys[b].append(ad.reshape(a @ p[pre + "attn.wk"], (1, cfg.d_model)))
        cache.values[b].append(ad.reshape(a @ p[pre + "attn.wv"], (1, cfg.d_model)))
        K = _split_heads(ad.concat(cache.keys[b], axis=0), H)
        V = _split_heads(ad.concat(cache.values[b], axis=0), H)
        att = ad.softmax((q @ ad.swapaxes(K, -1, -2)) * (1.0 / np.sqrt(dh)), axis=-1)
        h = h + ad.reshape(att @ V, (cfg.d_model,)) @ p[pre + "attn.wo"]
        h = h + _mlp(p, pre, h)
    return ad.layer_norm(h, p["lnf.g"], p["lnf.b"])


# decoding state ----------------------------------------------------------
class PrefixState:
    """A token prefix (BOS included) plus cached activations.

    Tokens appended with :meth:`push` are processed lazily by
    :func:`next_logits`; after that call the cache covers the whole prefix.
    """

    def __init__(self, bundle: LMBundle, prompt: Sequence[int] = ()):
        self.bundle = bundle
        self.tokens: list[int] = [bundle.vocabulary.bos]
        self.cache = StepCache(bundle.config.n_layers)
        self._last_hidden: np.ndarray | None = None
        for tok in prompt:
            self.push(tok)

    def push(self, token: int) -> None:
        if not 0 <= int(token) < self.bundle.config.vocab_size:
            raise IndexError(f"token {token} outside vocabulary")
        self.tokens.append(int(token))

    def copy(self) -> PrefixState:
        other = PrefixState.__new__(PrefixState)
        other.bundle = self.bundle
        other.tokens = list(self.tokens)
        other.cache = StepCache(self.bundle.config.n_layers)
        other.cache.keys = [list(k) for k in self.cache.keys]
        other.cache.values = [list(v) for v in self.cache.values]
        other._last_hidden = self._last_hidden
        return other

    def __len__(self) -> int:
        return len(self.tokens)


def next_logits(bundle: LMBundle, state: PrefixState) -> np.ndarray:
    """Raw final-layer logits for the token following ``state.tokens``."""
    cfg, p = bundle.config, bundle.params
    if len(state.tokens) >= cfg.context:
        raise ContextOverflowError(
            f"prefix length {len(state.tokens)} must be below context {cfg.context}")
    instrument.tally(instrument.LM_FORWARD)
    while len(state.cache) < len(state.tokens):
        tok = state.tokens[len(state.cache)]
        state._last_hidden = step_hidden(p, cfg, p["tok_emb"][tok], state.cache)
    return output_logits(p, state._last_hidden)


def sequence_logits(bundle: LMBundle, prompt: Sequence[int], response: Sequence[int]) -> np.ndarray:
    """Logits predicting each response token, shape (len(response), |V|)."""
    tokens = [bundle.vocabulary.bos, *prompt, *response]
    if len(tokens) > bundle.config.context:
        raise ContextOverflowError(
            f"prompt+response length {len(tokens)} exceeds context {bundle.config.context}")
    p = bundle.params
    instrument.tally(instrument.LM_SCORE)
    h = hidden_states(p, bundle.config, p["tok_emb"][np.asarray(tokens[:-1])])
    logits = output_logits(p, h)
    return logits[len(tokens) - 1 - len(response):]


def sequence_log_likelihood(bundle: LMBundle, prompt: Sequence[int], response: Sequence[int]) -> float:
    if len(response) == 0:
        raise ValueError("response must be non-empty")
    logits = sequence_logits(bundle, prompt, response)
    lp = ad.log_softmax(logits, axis=-1)
    return float(lp[np.arange(len(response)), np.asarray(response)].sum())


def perplexity(bundle: LMBundle, prompt: Sequence[int], response: Sequence[int]) -> float:
    return float(np.exp(-sequence_log_likelihood(bundle, prompt, response) / len(response)))


def greedy_continuation(bundle: LMBundle, prompt: Sequence[int], n: int) -> tuple[int, ...]:
    state = PrefixState(bundle, prompt)
    out = []
    for _ in range(n):
        tok = int(np.argmax(next_logits(bundle, state)))
        out.append(tok)
        state.push(tok)
    return tuple(out)
