"""Shared fixtures: the bundled corpus, a small vocabulary, and a trained
n-gram model are expensive enough to build once per session."""

from __future__ import annotations

import numpy as np
import pytest

from b2t.lattice import Lattice, PositionDistribution, Vocabulary, build_vocabulary
from b2t.lm import train_ngram
from b2t.synth import generate_synthetic_corpus


@pytest.fixture(scope="session")
def corpus() -> list[str]:
    return generate_synthetic_corpus()


@pytest.fixture(scope="session")
def vocab250(corpus) -> Vocabulary:
    return build_vocabulary(corpus, 250)


@pytest.fixture(scope="session")
def trigram(corpus):
    return train_ngram(corpus, order=3)


def random_lattice(
    rng: np.random.Generator,
    n_positions: int,
    vocab_words: tuple[str, ...],
    oov_flags: tuple[bool, ...] | None = None,
) -> Lattice:
    """A lattice with Dirichlet-random position distributions (test helper)."""
    vocab = Vocabulary(words=vocab_words, oov_pool=("filler",))
    positions = []
    for i in range(n_positions):
        probs = rng.dirichlet(np.ones(len(vocab_words)))
        flag = bool(oov_flags[i]) if oov_flags is not None else False
        positions.append(PositionDistribution(probs=probs, oov_truth=flag))
    return Lattice(vocab=vocab, positions=tuple(positions))


def small_vocab(k: int) -> tuple[str, ...]:
    return tuple(f"w{i}" for i in range(k))
