"""Language model scoring: a trainable backoff n-gram model.

The scorer contract used throughout the decoders is small: score one
continuation word in context, and rank continuation candidates.  Any object
with those two methods plugs in (see ``RemoteLmScorer`` in ``b2t.remote`` for
the hosted-LLM implementation).

The n-gram model uses additive (add-alpha) smoothing over its vocabulary and
backs off to the longest observed shorter context when the full context was
never seen.  Probabilities over the vocabulary sum to 1 for every context;
words outside the vocabulary score the zero-count floor
``alpha / (total + alpha * |vocab|)`` so every continuation has a finite
log-probability.

Model file format (UTF-8, one JSON object per line):

    line 1   {"format_version": 1, "order": k, "smoothing_alpha": a,
              "vocab_size": v}
    line 2   {"vocab": [...]}
    line 3+  {"ctx": [w, ...], "counts": {word: count, ...}}
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from typing import Protocol, Sequence, runtime_checkable

from .errors import LatticeFormatError
from .lattice import FORMAT_VERSION

__all__ = [
    "LmScorer",
    "NGramModel",
    "train_ngram",
    "score_continuation",
    "next_word_distribution",
    "save_ngram_file",
    "load_ngram_file",
]


@runtime_checkable
class LmScorer(Protocol):
    """Anything that can score and propose continuation words."""

    def score_continuation(self, context: Sequence[str], word: str) -> float:
        """Log-probability (finite, <= 0) of ``word`` following ``context``."""
        ...

    def next_word_distribution(self, context: Sequence[str], top_k: int) -> list[tuple[str, float]]:
        """Top ``top_k`` continuation candidates, descending by probability."""
        ...


class NGramModel:
    """Backoff n-gram model with additive smoothing.

    ``counts`` maps context tuples of every length 0..order-1 to next-word
    counters, so backoff needs no separate tables: dropping the leftmost
    context word walks down the orders.
    """

    def __init__(
        self,
        order: int,
        counts: dict[tuple[str, ...], Counter],
        vocabulary: frozenset[str],
        smoothing_alpha: float,
    ):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if smoothing_alpha <= 0:
            raise ValueError(f"smoothing_alpha must be positive, got {smoothing_alpha!r}")
        if not vocabulary:
            raise ValueError("vocabulary must be non-empty")
        self.order = order
        self.counts = counts
        self.vocabulary = frozenset(vocabulary)
        self.smoothing_alpha = smoothing_alpha
        self._totals = {ctx: sum(counter.values()) for ctx, counter in counts.items()}
        self._sorted_vocab = sorted(self.vocabulary)

    def _backoff_context(self, context: Sequence[str]) -> tuple[str, ...]:
        ctx = tuple(context[-(self.order - 1):]) if self.order > 1 else ()
        while ctx and ctx not in self.counts:
            ctx = ctx[1:]
        return ctx

    def probability(self, context: Sequence[str], word: str) -> float:
        """Smoothed probability of ``word`` after ``context`` (with backoff)."""
        ctx = self._backoff_context(context)
        counter = self.counts.get(ctx)
        total = self._totals.get(ctx, 0)
        count = counter.get(word, 0) if (counter is not None and word in self.vocabulary) else 0
        denom = total + self.smoothing_alpha * len(self.vocabulary)
        return (count + self.smoothing_alpha) / denom

    def score_continuation(self, context: Sequence[str], word: str) -> float:
        return math.log(self.probability(context, word))

    def next_word_distribution(self, context: Sequence[str], top_k: int) -> list[tuple[str, float]]:
        if top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {top_k}")
        ctx = self._backoff_context(context)
        counter = self.counts.get(ctx, Counter())
        total = self._totals.get(ctx, 0)
        alpha = self.smoothing_alpha
        denom = total + alpha * len(self.vocabulary)
        scored = [((counter.get(w, 0) + alpha) / denom, w) for w in self._sorted_vocab]
        scored.sort(key=lambda pair: (-pair[0], pair[1]))
        return [(w, p) for p, w in scored[:top_k]]


def train_ngram(corpus: Sequence[str], order: int, smoothing_alpha: float = 0.1) -> NGramModel:
    """Count every window of length 1..order over the corpus stream."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if smoothing_alpha <= 0:
        raise ValueError(f"smoothing_alpha must be positive, got {smoothing_alpha!r}")
    corpus = list(corpus)
    if len(corpus) < order:
        raise ValueError(f"corpus has {len(corpus)} words, need at least order={order}")
    counts: dict[tuple[str, ...], Counter] = defaultdict(Counter)
    for k in range(1, order + 1):
        for i in range(len(corpus) - k + 1):
            ctx = tuple(corpus[i:i + k - 1])
            counts[ctx][corpus[i + k - 1]] += 1
    return NGramModel(
        order=order,
        counts=dict(counts),
        vocabulary=frozenset(corpus),
        smoothing_alpha=smoothing_alpha,
    )


def score_continuation(model: LmScorer, context: Sequence[str], word: str) -> float:
    """Module-level convenience over any scorer."""
    return model.score_continuation(context, word)


def next_word_distribution(model: LmScorer, context: Sequence[str], top_k: int) -> list[tuple[str, float]]:
    """Module-level convenience over any scorer."""
    return model.next_word_distribution(context, top_k)


def save_ngram_file(model: NGramModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "format_version": FORMAT_VERSION,
            "order": model.order,
            "smoothing_alpha": model.smoothing_alpha,
            "vocab_size": len(model.vocabulary),
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        fh.write(json.dumps({"vocab": sorted(model.vocabulary)}) + "\n")
        for ctx in sorted(model.counts, key=lambda c: (len(c), c)):
            record = {"ctx": list(ctx), "counts": dict(sorted(model.counts[ctx].items()))}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_ngram_file(path) -> NGramModel:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise LatticeFormatError("model file is empty", 1)

    def parse(line_number: int) -> dict:
        try:
            obj = json.loads(lines[line_number - 1])
        except json.JSONDecodeError as exc:
            raise LatticeFormatError(f"invalid JSON: {exc.msg}", line_number)
        if not isinstance(obj, dict):
            raise LatticeFormatError("every record must be a JSON object", line_number)
        return obj

    header = parse(1)
    if header.get("format_version") != FORMAT_VERSION:
        raise LatticeFormatError(
            f"unsupported format_version {header.get('format_version')!r}", 1
        )
    try:
        order = int(header["order"])
        alpha = float(header["smoothing_alpha"])
        vocab_size = int(header["vocab_size"])
    except (KeyError, TypeError, ValueError) as exc:
        raise LatticeFormatError(f"bad model header: {exc}", 1)
    if len(lines) < 2:
        raise LatticeFormatError("model file is missing its vocabulary line", 2)
    vocab_record = parse(2)
    vocabulary = frozenset(vocab_record.get("vocab", ()))
    if len(vocabulary) != vocab_size:
        raise LatticeFormatError(
            f"header claims {vocab_size} vocabulary words, file has {len(vocabulary)}", 2
        )
    counts: dict[tuple[str, ...], Counter] = {}
    for line_number in range(3, len(lines) + 1):
        if not lines[line_number - 1].strip():
            continue
        record = parse(line_number)
        try:
            ctx = tuple(record["ctx"])
            counter = Counter({str(w): int(c) for w, c in record["counts"].items()})
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise LatticeFormatError(f"bad count record: {exc}", line_number)
        if len(ctx) >= order:
            raise LatticeFormatError(
                f"context of length {len(ctx)} in an order-{order} model", line_number
            )
        counts[ctx] = counter
    try:
        return NGramModel(order=order, counts=counts, vocabulary=vocabulary, smoothing_alpha=alpha)
    except ValueError as exc:
        raise LatticeFormatError(str(exc), 1)
