"""Transcript quality metrics and evaluation reports.

Six sequence-level metrics: word error rate, character error rate, unigram
BLEU, unigram ROUGE-F, a lightweight METEOR variant, and a greedy
max-cosine semantic F1 over a pluggable word embedder.  Words are normalized
the same way the lattice module normalizes corpus text before any scoring;
the ``<UNK>`` sentinel passes through untouched so it can never match a real
reference word.

Error rates are edit distance divided by reference length, so values above
1.0 are possible.  The default semantic embedder is a deterministic seeded
hash projection; reports carry a note that its absolute values are not
comparable to published transformer-embedding scores.
"""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .lattice import UNK_SENTINEL, Vocabulary, normalize_word

__all__ = [
    "wer",
    "cer",
    "bleu1",
    "rouge1f",
    "meteor_lite",
    "semantic_score",
    "HashProjectionEmbedder",
    "apply_unk_protocol",
    "SequenceScores",
    "MetricSummary",
    "EvalReport",
    "evaluate",
    "METRIC_NAMES",
]

METRIC_NAMES = ("wer", "cer", "bleu1", "rouge1f", "meteor_lite", "semantic")

SEMANTIC_NOTE = (
    "semantic scores use a deterministic hash-projection embedder; absolute "
    "values are not comparable to transformer-embedding results"
)


def _norm_words(seq: Sequence[str]) -> list[str]:
    out = []
    for raw in seq:
        if raw == UNK_SENTINEL:
            out.append(raw)
            continue
        word = normalize_word(raw)
        if word:
            out.append(word)
    return out


def _levenshtein(ref: Sequence, hyp: Sequence) -> int:
    """Iterative two-row edit distance (insert/delete/substitute, unit cost)."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    previous = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        current = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cost = 0 if r == h else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[-1]


def wer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Word edit distance divided by reference length."""
    ref = _norm_words(reference)
    hyp = _norm_words(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one word")
    return _levenshtein(ref, hyp) / len(ref)


def cer(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Character edit distance over the space-joined character streams."""
    ref = " ".join(_norm_words(reference))
    hyp = " ".join(_norm_words(hypothesis))
    if not ref:
        raise ValueError("reference must contain at least one character")
    return _levenshtein(ref, hyp) / len(ref)


def _clipped_overlap(ref: list[str], hyp: list[str]) -> int:
    ref_counts = Counter(ref)
    hyp_counts = Counter(hyp)
    return sum(min(c, ref_counts[w]) for w, c in hyp_counts.items())


def bleu1(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Clipped unigram precision times the brevity penalty."""
    ref = _norm_words(reference)
    hyp = _norm_words(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one word")
    if not hyp:
        return 0.0
    precision = _clipped_overlap(ref, hyp) / len(hyp)
    brevity = math.exp(min(0.0, 1.0 - len(ref) / len(hyp)))
    return precision * brevity


def rouge1f(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Harmonic mean of clipped unigram precision and recall."""
    ref = _norm_words(reference)
    hyp = _norm_words(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one word")
    if not hyp:
        return 0.0
    overlap = _clipped_overlap(ref, hyp)
    precision = overlap / len(hyp)
    recall = overlap / len(ref)
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


_STEM_SUFFIXES = ("ingly", "edly", "ings", "ing", "ied", "ies", "ed", "es", "ly", "s")


def _stem(word: str) -> str:
    """Cheap suffix stripper used for the stem-equal match stage."""
    for suffix in _STEM_SUFFIXES:
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[: -len(suffix)]
    return word


def meteor_lite(reference: Sequence[str], hypothesis: Sequence[str]) -> float:
    """Unigram METEOR variant: exact then stem matches, chunk penalty.

    Greedy left-to-right alignment: each hypothesis word takes the first
    unmatched reference word that matches exactly; a second pass aligns
    leftover words whose stems agree.  F_mean weights recall 9:1, the
    fragmentation penalty is 0.5 * (chunks / matches)^3.
    """
    ref = _norm_words(reference)
    hyp = _norm_words(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one word")
    if not hyp:
        return 0.0
    ref_taken = [False] * len(ref)
    alignment: list[tuple[int, int]] = []  # (hyp index, ref index)
    hyp_matched = [False] * len(hyp)
    for i, word in enumerate(hyp):
        for j, target in enumerate(ref):
            if not ref_taken[j] and word == target:
                ref_taken[j] = True
                hyp_matched[i] = True
                alignment.append((i, j))
                break
    for i, word in enumerate(hyp):
        if hyp_matched[i]:
            continue
        stem = _stem(word)
        for j, target in enumerate(ref):
            if not ref_taken[j] and stem == _stem(target):
                ref_taken[j] = True
                hyp_matched[i] = True
                alignment.append((i, j))
                break
    matches = len(alignment)
    if matches == 0:
        return 0.0
    precision = matches / len(hyp)
    recall = matches / len(ref)
    f_mean = precision * recall / (0.9 * precision + 0.1 * recall)
    alignment.sort()
    chunks = 1
    for (h_prev, r_prev), (h_next, r_next) in zip(alignment, alignment[1:]):
        if h_next != h_prev + 1 or r_next != r_prev + 1:
            chunks += 1
    penalty = 0.5 * (chunks / matches) ** 3
    return f_mean * (1.0 - penalty)


class HashProjectionEmbedder:
    """Deterministic word embedder: seeded hash -> Gaussian -> unit vector.

    The same word maps to the same unit vector on every platform and run for
    a fixed seed; different words get independent directions.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 2:
            raise ValueError(f"dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, word: str) -> np.ndarray:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        digest = hashlib.sha256(f"{self.seed}:{word}".encode("utf-8")).digest()
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "big")))
        vec = rng.standard_normal(self.dim)
        vec /= np.linalg.norm(vec)
        vec.setflags(write=False)
        self._cache[word] = vec
        return vec


def semantic_score(
    reference: Sequence[str],
    hypothesis: Sequence[str],
    embedder: Callable[[str], np.ndarray] | None = None,
) -> float:
    """Greedy max-cosine F1 between embedded word sequences.

    Each hypothesis word is credited with its best cosine against any
    reference word (precision side) and vice versa (recall side); negative
    cosines clamp to zero so the score stays in [0, 1].
    """
    ref = _norm_words(reference)
    hyp = _norm_words(hypothesis)
    if not ref:
        raise ValueError("reference must contain at least one word")
    if not hyp:
        return 0.0
    if embedder is None:
        embedder = HashProjectionEmbedder()
    ref_vecs = np.stack([embedder(w) for w in ref])
    hyp_vecs = np.stack([embedder(w) for w in hyp])
    norms_r = np.linalg.norm(ref_vecs, axis=1, keepdims=True)
    norms_h = np.linalg.norm(hyp_vecs, axis=1, keepdims=True)
    if np.any(norms_r == 0) or np.any(norms_h == 0):
        raise ValueError("embedder produced a zero vector")
    sims = (hyp_vecs / norms_h) @ (ref_vecs / norms_r).T
    sims = np.clip(sims, 0.0, None)
    precision = float(sims.max(axis=1).mean())
    recall = float(sims.max(axis=0).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def apply_unk_protocol(
    hypothesis: Sequence[str],
    oov_flags: Sequence[bool],
    mode: str = "insert_unk",
    vocab: Vocabulary | None = None,
    rng: np.random.Generator | None = None,
) -> list[str]:
    """Rewrite flagged positions before scoring.

    ``insert_unk`` replaces flagged words with the sentinel, ``drop`` removes
    them, ``random_fill`` substitutes a uniform draw from the vocabulary's
    OOV pool.
    """
    if len(hypothesis) != len(oov_flags):
        raise ValueError(
            f"{len(hypothesis)} words but {len(oov_flags)} flags; lengths must match"
        )
    if mode == "insert_unk":
        return [UNK_SENTINEL if flag else w for w, flag in zip(hypothesis, oov_flags)]
    if mode == "drop":
        return [w for w, flag in zip(hypothesis, oov_flags) if not flag]
    if mode == "random_fill":
        if vocab is None or not vocab.oov_pool:
            raise ValueError("random_fill requires a vocabulary with a non-empty oov_pool")
        if rng is None:
            raise ValueError("random_fill requires an rng")
        pool = vocab.oov_pool
        return [
            pool[int(rng.integers(len(pool)))] if flag else w
            for w, flag in zip(hypothesis, oov_flags)
        ]
    raise ValueError(f"unknown unk protocol mode {mode!r}")


@dataclass(frozen=True)
class SequenceScores:
    wer: float
    cer: float
    bleu1: float
    rouge1f: float
    meteor_lite: float
    semantic: float

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    sem: float
    n: int


@dataclass(frozen=True)
class EvalReport:
    """Per-sequence scores plus mean and standard error for each metric."""

    per_sequence: tuple[SequenceScores, ...]
    summaries: dict[str, MetricSummary]
    note: str = SEMANTIC_NOTE

    def summary_dict(self) -> dict:
        return {
            "metrics": {
                name: {"mean": s.mean, "sem": s.sem, "n": s.n}
                for name, s in self.summaries.items()
            },
            "note": self.note,
        }

    def table(self) -> str:
        """Fixed-width text table, one row for means, one for standard errors."""
        header = "".join(f"{name:>14}" for name in METRIC_NAMES)
        means = "".join(f"{self.summaries[name].mean:>14.4f}" for name in METRIC_NAMES)
        sems = "".join(f"{self.summaries[name].sem:>14.4f}" for name in METRIC_NAMES)
        n = self.summaries[METRIC_NAMES[0]].n
        return "\n".join(
            [
                f"{'':>8}" + header,
                f"{'mean':>8}" + means,
                f"{'sem':>8}" + sems,
                f"n = {n}; {self.note}",
            ]
        )

    def report_lines(self) -> list[str]:
        lines = [f"# n={len(self.per_sequence)}"]
        lines.append("# columns: " + " ".join(METRIC_NAMES))
        for scores in self.per_sequence:
            lines.append(" ".join(f"{scores.as_dict()[m]:.6f}" for m in METRIC_NAMES))
        return lines


def _summarize(values: list[float]) -> MetricSummary:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    sem = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    return MetricSummary(mean=mean, sem=sem, n=arr.size)


def evaluate(
    references: Sequence[Sequence[str]],
    hypotheses: Sequence[Sequence[str]],
    embedder: Callable[[str], np.ndarray] | None = None,
) -> EvalReport:
    """Score each reference/hypothesis pair and aggregate."""
    if len(references) != len(hypotheses):
        raise ValueError(
            f"{len(references)} references but {len(hypotheses)} hypotheses"
        )
    if not references:
        raise ValueError("nothing to evaluate")
    if embedder is None:
        embedder = HashProjectionEmbedder()
    rows = []
    for ref, hyp in zip(references, hypotheses):
        rows.append(
            SequenceScores(
                wer=wer(ref, hyp),
                cer=cer(ref, hyp),
                bleu1=bleu1(ref, hyp),
                rouge1f=rouge1f(ref, hyp),
                meteor_lite=meteor_lite(ref, hyp),
                semantic=semantic_score(ref, hyp, embedder=embedder),
            )
        )
    summaries = {
        name: _summarize([row.as_dict()[name] for row in rows]) for name in METRIC_NAMES
    }
    return EvalReport(per_sequence=tuple(rows), summaries=summaries)
