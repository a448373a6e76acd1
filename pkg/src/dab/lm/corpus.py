"""Synthetic review-style corpus and plain-text corpus files.

Documents are two or three short sentences with a consistent sentiment.
Each noun carries a sentiment prior, so a prompt such as ``the food was``
continues negatively under a well-fit model; a few neutral sentences mention
topic keywords so keyword-guided tasks are exercisable too.
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

POSITIVE_ADJ = ("good", "great", "wonderful", "lovely", "amazing", "excellent", "delightful", "perfect")
NEGATIVE_ADJ = ("bad", "awful", "terrible", "boring", "horrible", "poor", "dull", "rude")
POSITIVE_VERBS = ("loved", "enjoyed", "liked")
NEGATIVE_VERBS = ("hated", "disliked", "regretted")
INTENSIFIERS = ("very", "really", "so")
LINKING = ("seemed", "looked", "felt")
KEYWORDS = ("router", "server", "keyboard", "planet", "satellite", "church", "priest", "court")
# P(positive document) given the opening noun
NOUN_PRIOR = {
    "food": 0.3, "service": 0.3, "hotel": 0.3, "room": 0.3, "staff": 0.3, "place": 0.3,
    "movie": 0.7, "story": 0.7, "music": 0.7, "book": 0.7, "city": 0.7, "show": 0.7,
}
NOUNS = tuple(NOUN_PRIOR)

POSITIVE_TOKENS = POSITIVE_ADJ + POSITIVE_VERBS
NEGATIVE_TOKENS = NEGATIVE_ADJ + NEGATIVE_VERBS

SENTIMENT_PROMPTS = ("the food was", "the service was", "the hotel was", "the room was", "the staff was")
KEYWORD_PROMPTS = ("the food was", "the movie was", "we saw the", "it was a", "the city was")


def _pick(rng: np.random.Generator, options: Sequence[str]) -> str:
    return options[int(rng.integers(len(options)))]


def _sentence(rng: np.random.Generator, noun: str, positive: bool) -> list[str]:
    adj = POSITIVE_ADJ if positive else NEGATIVE_ADJ
    verbs = POSITIVE_VERBS if positive else NEGATIVE_VERBS
    template = int(rng.integers(9))
    if template == 0:
        words = ["the", noun, "was", _pick(rng, adj)]
    elif template == 1:
        words = ["the", noun, "was", _pick(rng, INTENSIFIERS), _pick(rng, adj)]
    elif template == 2:
        words = ["the", noun, "was", _pick(rng, adj), "and", _pick(rng, adj)]
    elif template == 3:
        words = ["i", _pick(rng, verbs), "the", noun]
    elif template == 4:
        words = ["it", "was", "a", _pick(rng, adj), noun]
    elif template == 5:
        words = ["the", noun, _pick(rng, LINKING), _pick(rng, adj)]
    elif template == 6:
        words = ["the", noun, "was", "also", _pick(rng, adj)]
    elif template == 7:
        words = ["there", "was", "a", _pick(rng, adj), noun]
    else:
        words = ["then", "the", noun, "was", _pick(rng, adj)]
    return words + ["."]


def _keyword_sentence(rng: np.random.Generator) -> list[str]:
    template = int(rng.integers(3))
    if template == 0:
        words = ["we", "saw", "the", _pick(rng, KEYWORDS), "near", "the", _pick(rng, NOUNS)]
    elif template == 1:
        words = ["the", _pick(rng, NOUNS), "has", "a", _pick(rng, KEYWORDS), "with", "a", _pick(rng, KEYWORDS)]
    else:
        words = ["it", "was", "a", _pick(rng, KEYWORDS)]
    return words + ["."]


def synthetic_document(rng: np.random.Generator) -> list[str]:
    noun = _pick(rng, NOUNS)
    positive = bool(rng.random() < NOUN_PRIOR[noun])
    words = _sentence(rng, noun, positive)
    for _ in range(int(rng.integers(1, 3))):
        if rng.random() < 0.25:
            words += _keyword_sentence(rng)
        else:
            words += _sentence(rng, _pick(rng, NOUNS), positive)
    return words


def synthetic_corpus(n_docs: int, rng: np.random.Generator) -> list[list[str]]:
    return [synthetic_document(rng) for _ in range(n_docs)]


def sentiment_label(tokens: Sequence[str]) -> int | None:
    """1 for net-positive, 0 for net-negative, None when balanced."""
    score = sum(t in POSITIVE_TOKENS for t in tokens) - sum(t in NEGATIVE_TOKENS for t in tokens)
    if score == 0:
        return None
    return int(score > 0)


def write_corpus(path: str | Path, lines: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(" ".join(line) + "\n")


def read_corpus(path: str | Path) -> list[list[str]]:
    with open(path, encoding="utf-8") as fh:
        lines = [line.split() for line in fh]
    lines = [line for line in lines if line]
    if not lines:
        raise ValueError(f"corpus {path} is empty")
    return lines
