from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

BOS = "<s>"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tokens = tuple(self.tokens)
        object.__setattr__(self, "tokens", tokens)
        if len(tokens) < 2:
            raise ValueError("vocabulary needs at least two tokens")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        if any(not tok or any(ch.isspace() for ch in tok) for tok in tokens):
            raise ValueError("tokens must be non-empty and whitespace-free")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_corpus(cls, lines: Iterable[Sequence[str]]) -> Vocabulary:
        """BOS first, then the remaining tokens sorted, so order is stable."""
        seen = {tok for line in lines for tok in line}
        seen.discard(BOS)
        return cls((BOS, *sorted(seen)))

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos(self) -> int:
        return self._index[BOS]

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def encode(self, text: str | Sequence[str]) -> tuple[int, ...]:
        words = text.split() if isinstance(text, str) else text
        return tuple(self.index(w) for w in words)

    def decode(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)
