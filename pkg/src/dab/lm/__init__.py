from .model import (
    ContextOverflowError,
    LMBundle,
    LMConfig,
    PrefixState,
    greedy_continuation,
    next_logits,
    perplexity,
    sequence_log_likelihood,
    sequence_logits,
)
from .train import TrainConfig, TrainingDivergedError, train_tiny_lm
from .vocab import BOS, Vocabulary

__all__ = [
    "BOS",
    "ContextOverflowError",
    "LMBundle",
    "LMConfig",
    "PrefixState",
    "TrainConfig",
    "TrainingDivergedError",
    "Vocabulary",
    "greedy_continuation",
    "next_logits",
    "perplexity",
    "sequence_log_likelihood",
    "sequence_logits",
    "train_tiny_lm",
]
