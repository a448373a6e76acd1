"""Call counters for LM and constraint evaluations.

Counting is scoped with :func:`counting`; each thread keeps its own stack of
active counters, so concurrent chains never see each other's increments.
"""

from __future__ import annotations

import contextlib
import contextvars
from collections import Counter
from typing import Iterator

LM_FORWARD = "lm_forward"
LM_BACKWARD = "lm_backward"
LM_SCORE = "lm_score"
CONSTRAINT_FORWARD = "constraint_forward"
CONSTRAINT_BACKWARD = "constraint_backward"

_active: contextvars.ContextVar[tuple[Counter, ...]] = contextvars.ContextVar(
    "dab_counters", default=()
)


def tally(event: str, amount: int = 1) -> None:
    for counter in _active.get():
        counter[event] += amount


@contextlib.contextmanager
def counting() -> Iterator[Counter]:
    """Collect every :func:`tally` issued inside the block (nesting allowed)."""
    counter: Counter = Counter()
    token = _active.set(_active.get() + (counter,))
    try:
        yield counter
    finally:
        _active.reset(token)
