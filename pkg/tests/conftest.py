from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from dab import cli
from dab import constraints as C
from dab.lm.weights import load_lm
from dab.validation import random_bundle, random_classifier


@pytest.fixture
def tiny_bundle():
    return random_bundle(seed=0)


@pytest.fixture
def tiny_classifier(tiny_bundle):
    return random_classifier(tiny_bundle.embeddings, seed=0)


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory) -> Path:
    """LM + classifier trained once per session on the shipped synthetic corpus."""
    out = tmp_path_factory.mktemp("models")
    assert cli.main(["train", "--synthetic", "3000", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="session")
def trained(trained_dir):
    bundle = load_lm(trained_dir / "lm.weights")
    clf = C.load_classifier(trained_dir / "classifier.weights", bundle.embeddings, bundle.vocabulary.tokens)
    return bundle, clf


def model_flags(trained_dir: Path) -> list[str]:
    return ["--lm", str(trained_dir / "lm.weights"), "--classifier", str(trained_dir / "classifier.weights")]
