from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import autodiff as ad
from .model import LMBundle, LMConfig, hidden_states, init_params, output_logits
from .vocab import Vocabulary

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    beta2: float = 0.99
    optimizer: str = "adam"
    warmup: int = 30
    init_scale: float = 0.02
    grad_clip: float = 1.0
    log_every: int = 100


def lr_at(cfg: TrainConfig, step: int) -> float:
    """Linear warmup then linear decay to zero."""
    if step < cfg.warmup:
        return cfg.lr * (step + 1) / cfg.warmup
    remaining = max(cfg.steps - cfg.warmup, 1)
    return cfg.lr * max(0.0, 1.0 - (step - cfg.warmup) / remaining)


def pad_batch(seqs: Sequence[Sequence[int]], pad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs, next-token targets and a loss mask for right-padded sequences."""
    T = max(len(s) for s in seqs) - 1
    inputs = np.full((len(seqs), T), pad, dtype=np.int64)
    targets = np.full((len(seqs), T), pad, dtype=np.int64)
    mask = np.zeros((len(seqs), T))
    for r, s in enumerate(seqs):
        s = np.asarray(s)
        inputs[r, : len(s) - 1] = s[:-1]
        targets[r, : len(s) - 1] = s[1:]
        mask[r, : len(s) - 1] = 1.0
    return inputs, targets, mask


class _Optimizer:
    def __init__(self, cfg: TrainConfig, params: dict[str, np.ndarray]):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        cfg = self.cfg
        self.t += 1
        for k, g in grads.items():
            if cfg.optimizer == "sgd":
                self.m[k] = cfg.momentum * self.m[k] + g
                params[k] = params[k] - lr * self.m[k]
            else:
                self.m[k] = cfg.momentum * self.m[k] + (1 - cfg.momentum) * g
                self.v[k] = cfg.beta2 * self.v[k] + (1 - cfg.beta2) * g * g
                mhat = self.m[k] / (1 - cfg.momentum ** self.t)
                vhat = self.v[k] / (1 - cfg.beta2 ** self.t)
                params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + 1e-8)


def batch_loss(params, cfg: LMConfig, inputs, targets, mask):
    x = ad.getitem(params["tok_emb"], inputs)
    logits = output_logits(params, hidden_states(params, cfg, x))
    return ad.cross_entropy(logits, targets, mask)


def mean_nll(bundle: LMBundle, seqs: Sequence[Sequence[int]]) -> float:
    """Per-token negative log-likelihood of ``seqs`` (each starting with BOS)."""
    total, count = 0.0, 0.0
    for start in range(0, len(seqs), 64):
        chunk = seqs[start:start + 64]
        inputs, targets, mask = pad_batch(chunk, bundle.vocabulary.bos)
        loss = batch_loss(bundle.params, bundle.config, inputs, targets, mask)
        total += float(loss) * mask.sum()
        count += mask.sum()
    return total / count


def train_tiny_lm(
    corpus: Sequence[Sequence[int]],
    vocabulary: Vocabulary,
    rng: np.random.Generator,
    train_cfg: TrainConfig = TrainConfig(),
    lm_cfg: LMConfig | None = None,
) -> LMBundle:
    """Fit the tiny transformer to ``corpus`` (token ids, BOS not included)."""
    if not corpus:
        raise ValueError("corpus is empty")
    lm_cfg = lm_cfg or LMConfig(vocab_size=len(vocabulary))
    V = len(vocabulary)
    seqs = []
    for line in corpus:
        if any(not 0 <= t < V for t in line):
            raise ValueError("corpus token outside vocabulary")
        seq = [vocabulary.bos, *line]
        if len(seq) > lm_cfg.context:
            seq = seq[: lm_cfg.context]
        if len(seq) >= 2:
            seqs.append(seq)
    if not seqs:
        raise ValueError("corpus has no sequence of length >= 1")

    params = init_params(lm_cfg, rng, train_cfg.init_scale)
    opt = _Optimizer(train_cfg, params)
    recent: list[float] = []
    for step in range(train_cfg.steps):
        idx = rng.integers(len(seqs), size=train_cfg.batch_size)
        inputs, targets, mask = pad_batch([seqs[i] for i in idx], vocabulary.bos)
        leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}
        loss = batch_loss(leaves, lm_cfg, inputs, targets, mask)
        value = float(loss.data)
        recent = (recent + [value])[-10:]
        if not np.isfinite(value):
            raise TrainingDivergedError(
                f"loss became {value} at step {step} (lr={lr_at(train_cfg, step):.4g}); "
                f"recent losses: {recent}")
        loss.backward()
        grads = {k: t.grad for k, t in leaves.items()}
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if train_cfg.grad_clip and norm > train_cfg.grad_clip:
            grads = {k: g * (train_cfg.grad_clip / norm) for k, g in grads.items()}
        opt.update(params, grads, lr_at(train_cfg, step))
        if train_cfg.log_every and step % train_cfg.log_every == 0:
            log.info("step %d loss %.4f", step, value)
    return LMBundle(vocabulary, lm_cfg, params)
