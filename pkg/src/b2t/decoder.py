"""Decoding: greedy, LM-rescored beam search, OOV in-filling, CTC merging.

The fused beam objective adds, per step, the lattice's model log-probability
and ``rescorer_weight`` times a language-model term.  In the default
``incremental`` mode the LM term is the conditional log-probability of the
new word given the last ``context_limit`` hypothesis words; ``whole_prefix``
mode instead re-adds the whole prefix's LM log-probability at every step
(an accumulating variant kept behind a flag for comparison).

Out-of-vocabulary handling at flagged positions (see ``DecoderConfig``):

* ``unk_sentinel``: every hypothesis emits the ``<UNK>`` sentinel (no score
  change);
* ``random``: one uniform draw from the OOV pool per position, shared by all
  hypotheses so a zero-weight beam stays identical to greedy;
* ``during_beam``: each hypothesis is extended in place with its filler's
  argmax continuation; the filled word contributes no lattice term but does
  receive the weighted rescorer increment so beams remain comparable.

Tie-breaking: greedy takes the lowest vocabulary index; beam ties compare
word sequences lexicographically by vocabulary index (fill words order after
all vocabulary words, by string), which keeps a zero-weight beam exactly
equal to greedy on every lattice, ties included.

Prompt builders for the two in-context modes instantiate versioned text
templates stored under ``assets/prompts``; the enumerated response format is
a brace-wrapped mapping of 0-indexed positions to words.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ResponseParseError
from .lattice import Lattice, PositionDistribution, UNK_SENTINEL, softmax
from .lm import LmScorer

__all__ = [
    "DecoderConfig",
    "BeamHypothesis",
    "decode_greedy",
    "decode_beam",
    "decode_beam_fill",
    "resolve_oov_flags",
    "build_ic_fill_prompt",
    "build_ic_transcribe_prompt",
    "parse_enumerated_response",
    "serialize_enumerated",
    "merge_fill_response",
    "run_ic_fill",
    "run_ic_transcribe",
    "collapse_repeats",
    "average_pool",
    "merge_time_slots",
    "ctc_merge_decode",
]

_FILL_MODES = ("none", "unk_sentinel", "random", "during_beam")
_OOV_SOURCES = ("none", "ground_truth", "detector")
_RESCORE_MODES = ("incremental", "whole_prefix")

_PROMPT_DIR = Path(__file__).parent / "assets" / "prompts"
IC_FILL_TEMPLATE = "ic_fill.v1.txt"
IC_TRANSCRIBE_TEMPLATE = "ic_transcribe.v1.txt"


@dataclass(frozen=True)
class DecoderConfig:
    beam_width: int = 5
    rescorer_weight: float = 1.5
    context_limit: int = 8
    candidates_per_step: int = 5
    fill_mode: str = "none"
    oov_source: str = "none"
    detector_threshold: float = 0.5
    rescore_mode: str = "incremental"
    sharpen_temperature: float = 0.01
    top_pairs: int = 5

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError(f"beam_width must be >= 1, got {self.beam_width}")
        if self.rescorer_weight < 0:
            raise ValueError(f"rescorer_weight must be >= 0, got {self.rescorer_weight!r}")
        if self.context_limit < 0:
            raise ValueError(f"context_limit must be >= 0, got {self.context_limit}")
        if self.candidates_per_step < 1:
            raise ValueError(f"candidates_per_step must be >= 1, got {self.candidates_per_step}")
        if self.fill_mode not in _FILL_MODES:
            raise ValueError(f"unknown fill_mode {self.fill_mode!r}")
        if self.oov_source not in _OOV_SOURCES:
            raise ValueError(f"unknown oov_source {self.oov_source!r}")
        if not 0.0 <= self.detector_threshold <= 1.0:
            raise ValueError(f"detector_threshold must lie in [0, 1], got {self.detector_threshold!r}")
        if self.rescore_mode not in _RESCORE_MODES:
            raise ValueError(f"unknown rescore_mode {self.rescore_mode!r}")
        if self.sharpen_temperature <= 0:
            raise ValueError(f"sharpen_temperature must be positive, got {self.sharpen_temperature!r}")
        if self.top_pairs < 1:
            raise ValueError(f"top_pairs must be >= 1, got {self.top_pairs}")


@dataclass(frozen=True)
class BeamHypothesis:
    """One beam entry: the word prefix, its fused score, and bookkeeping."""

    words: tuple[str, ...]
    score: float
    sort_key: tuple = ()
    lm_logprob: float = 0.0  # accumulated LM log-prob; used in whole_prefix mode


def resolve_oov_flags(lattice: Lattice, config: DecoderConfig) -> list[bool]:
    """Per-position OOV flags according to ``config.oov_source``."""
    if config.oov_source == "none":
        return [False] * len(lattice)
    flags = []
    for i, pos in enumerate(lattice.positions):
        if config.oov_source == "ground_truth":
            if pos.oov_truth is None:
                raise ValueError(f"position {i} has no oov_truth but oov_source=ground_truth")
            flags.append(bool(pos.oov_truth))
        else:
            if pos.oov_detected is None:
                raise ValueError(f"position {i} has no oov_detected but oov_source=detector")
            flags.append(pos.oov_detected >= config.detector_threshold)
    return flags


def _random_fill_words(
    lattice: Lattice,
    flags: Sequence[bool],
    rng: np.random.Generator | None,
) -> list[str | None]:
    """One shared OOV-pool draw per flagged position (never per hypothesis)."""
    pool = lattice.vocab.oov_pool
    out: list[str | None] = [None] * len(flags)
    if not any(flags):
        return out
    if not pool:
        raise ValueError("random fill requires a non-empty oov_pool")
    if rng is None:
        raise ValueError("random fill requires an rng")
    for i, flag in enumerate(flags):
        if flag:
            out[i] = pool[int(rng.integers(len(pool)))]
    return out


def decode_greedy(
    lattice: Lattice,
    config: DecoderConfig | None = None,
    rng: np.random.Generator | None = None,
) -> list[str]:
    """Positionwise argmax decoding; ties go to the lowest vocabulary index."""
    config = config or DecoderConfig()
    if config.fill_mode == "during_beam":
        raise ValueError("during_beam fill is a beam decoder mode; use decode_beam_fill")
    flags = resolve_oov_flags(lattice, config)
    random_fill = (
        _random_fill_words(lattice, flags, rng) if config.fill_mode == "random" else None
    )
    words = []
    for i, pos in enumerate(lattice.positions):
        if flags[i] and config.fill_mode == "unk_sentinel":
            words.append(UNK_SENTINEL)
        elif flags[i] and config.fill_mode == "random":
            words.append(random_fill[i])
        else:
            words.append(lattice.vocab.words[int(np.argmax(pos.probs))])
    return words


def _candidate_indices(probs: np.ndarray, k: int) -> np.ndarray:
    """Top-k indices by probability, ties toward lower indices."""
    order = np.argsort(-probs, kind="stable")
    return order[: min(k, probs.size)]


def _log(p: float) -> float:
    return math.log(p) if p > 0.0 else -math.inf

def _beam_engine(
    lattice: Lattice,
    scorer: LmScorer | None,
    filler: LmScorer | None,
    config: DecoderConfig,
    rng: np.random.Generator | None,
) -> list[str]:
    weight = config.rescorer_weight
    if weight > 0 and scorer is None:
        raise ValueError("a scorer is required when rescorer_weight > 0")
    if config.fill_mode == "during_beam" and filler is None:
        raise ValueError("during_beam fill requires a filler model")
    flags = resolve_oov_flags(lattice, config)
    random_fill = (
        _random_fill_words(lattice, flags, rng) if config.fill_mode == "random" else None
    )
    whole_prefix = config.rescore_mode == "whole_prefix"

    def rescored(hyp: BeamHypothesis, word: str, base: float) -> tuple[float, float]:
        """New (score, lm_logprob) after appending ``word`` at model score ``base``."""
        if weight == 0 or scorer is None:
            return hyp.score + base, hyp.lm_logprob
        context = hyp.words[-config.context_limit:] if config.context_limit else ()
        increment = scorer.score_continuation(context, word)
        lm_total = hyp.lm_logprob + increment
        if whole_prefix:
            return hyp.score + base + weight * lm_total, lm_total
        return hyp.score + base + weight * increment, lm_total

    beams = [BeamHypothesis(words=(), score=0.0, sort_key=(), lm_logprob=0.0)]
    for i, pos in enumerate(lattice.positions):
        if flags[i] and config.fill_mode != "none":
            extended = []
            for hyp in beams:
                if config.fill_mode == "unk_sentinel":
                    word, piece = UNK_SENTINEL, (1, UNK_SENTINEL)
                    score, lm_total = hyp.score, hyp.lm_logprob
                elif config.fill_mode == "random":
                    word, piece = random_fill[i], (1, random_fill[i])
                    score, lm_total = hyp.score, hyp.lm_logprob
                else:  # during_beam
                    context = hyp.words[-config.context_limit:] if config.context_limit else ()
                    candidates = filler.next_word_distribution(context, 1)
                    word = candidates[0][0] if candidates else UNK_SENTINEL
                    piece = (1, word)
                    score, lm_total = rescored(hyp, word, 0.0)
                extended.append(
                    BeamHypothesis(
                        words=hyp.words + (word,),
                        score=score,
                        sort_key=hyp.sort_key + (piece,),
                        lm_logprob=lm_total,
                    )
                )
            beams = extended
            continue
        candidates = _candidate_indices(pos.probs, config.candidates_per_step)
        expansions = []
        for hyp in beams:
            for idx in candidates:
                idx = int(idx)
                word = lattice.vocab.words[idx]
                base = _log(float(pos.probs[idx]))
                score, lm_total = rescored(hyp, word, base)
                expansions.append(
                    BeamHypothesis(
                        words=hyp.words + (word,),
                        score=score,
                        sort_key=hyp.sort_key + ((0, idx),),
                        lm_logprob=lm_total,
                    )
                )
        expansions.sort(key=lambda h: (-h.score, h.sort_key))
        beams = expansions[: config.beam_width]
    return list(beams[0].words)


def decode_beam(
    lattice: Lattice,
    scorer: LmScorer | None = None,
    config: DecoderConfig | None = None,
    rng: np.random.Generator | None = None,
) -> list[str]:
    """LM-rescored beam search; zero rescorer weight reduces to greedy."""
    config = config or DecoderConfig()
    if config.fill_mode == "during_beam":
        raise ValueError("during_beam fill needs a filler; use decode_beam_fill")
    return _beam_engine(lattice, scorer, None, config, rng)


def decode_beam_fill(
    lattice: Lattice,
    scorer: LmScorer | None,
    filler: LmScorer,
    config: DecoderConfig | None = None,
) -> list[str]:
    """Beam search that fills flagged positions with the filler's argmax."""
    config = config or DecoderConfig(fill_mode="during_beam", oov_source="ground_truth")
    if config.fill_mode != "during_beam":
        config = replace(config, fill_mode="during_beam")
    return _beam_engine(lattice, scorer, filler, config, rng=None)


# ---------------------------------------------------------------------------
# In-context prompting
# ---------------------------------------------------------------------------


def _load_template(name: str) -> str:
    return (_PROMPT_DIR / name).read_text(encoding="utf-8").rstrip("\n")


def _instantiate(template: str, n_words: int, predictions: str) -> str:
    return (
        template.replace("@@N_WORDS@@", str(n_words))
        .replace("@@LAST_INDEX@@", str(n_words - 1))
        .replace("@@PREDICTIONS@@", predictions)
    )


def build_ic_fill_prompt(words: Sequence[str]) -> str:
    """Instantiate the in-filling prompt for a decoded sequence with sentinels."""
    if not words:
        raise ValueError("words must be non-empty")
    lines = "\n".join(f"{i}: {w}" for i, w in enumerate(words))
    return _instantiate(_load_template(IC_FILL_TEMPLATE), len(words), lines)


def build_ic_transcribe_prompt(lattice: Lattice, config: DecoderConfig | None = None) -> str:
    """Instantiate the transcription prompt: top pairs per position, sharpened.

    Each non-OOV line lists the ``config.top_pairs`` most probable words with
    probabilities sharpened by a softmax at ``config.sharpen_temperature``
    over those raw probabilities; flagged positions show the sentinel.
    """
    config = config or DecoderConfig(oov_source="ground_truth")
    flags = resolve_oov_flags(lattice, config)
    lines = []
    for i, pos in enumerate(lattice.positions):
        if flags[i]:
            lines.append(f"{i}: {UNK_SENTINEL}")
            continue
        idx = _candidate_indices(pos.probs, config.top_pairs)
        sharpened = softmax(pos.probs[idx], temperature=config.sharpen_temperature)
        pairs = ", ".join(
            f"({lattice.vocab.words[int(j)]}, {p:.3f})" for j, p in zip(idx, sharpened)
        )
        lines.append(f"{i}: {pairs}")
    return _instantiate(
        _load_template(IC_TRANSCRIBE_TEMPLATE), len(lattice), "\n".join(lines)
    )


_ENTRY_RE = re.compile(
    r"(\d+)\s*:\s*(?:\"([^\"]*)\"|'([^']*)'|([^,{}]+))"
)


def parse_enumerated_response(text: str, expected_count: int) -> list[str]:
    """Parse a brace-wrapped enumerated mapping into an ordered word list.

    Requires exactly ``expected_count`` entries covering indices 0 to
    ``expected_count - 1`` with no duplicates; raises ResponseParseError
    otherwise.
    """
    if expected_count < 1:
        raise ValueError(f"expected_count must be >= 1, got {expected_count}")
    start = text.find("{")
    end = text.rfind("}")
    if start == -1 or end == -1 or end <= start:
        raise ResponseParseError("response contains no brace-wrapped mapping")
    body = text[start + 1 : end]
    entries: dict[int, str] = {}
    for match in _ENTRY_RE.finditer(body):
        index = int(match.group(1))
        word = next(g for g in match.groups()[1:] if g is not None).strip()
        if not word:
            raise ResponseParseError(f"position {index} maps to an empty word")
        if index in entries:
            raise ResponseParseError(f"position {index} appears more than once")
        entries[index] = word
    if len(entries) != expected_count:
        raise ResponseParseError(
            f"expected {expected_count} positions, found {len(entries)}"
        )
    missing = [i for i in range(expected_count) if i not in entries]
    if missing:
        raise ResponseParseError(f"missing positions {missing[:5]}")
    return [entries[i] for i in range(expected_count)]


def serialize_enumerated(words: Sequence[str]) -> str:
    """The canonical enumerated form: {0: "w0", 1: "w1", ...}."""
    body = ", ".join(f'{i}: "{w}"' for i, w in enumerate(words))
    return "{" + body + "}"


def merge_fill_response(original: Sequence[str], parsed: Sequence[str]) -> list[str]:
    """Take parsed words only at sentinel positions; keep the rest verbatim."""
    if len(original) != len(parsed):
        raise ValueError(
            f"original has {len(original)} words but response has {len(parsed)}"
        )
    return [p if o == UNK_SENTINEL else o for o, p in zip(original, parsed)]


def run_ic_fill(
    words: Sequence[str],
    chat: Callable[[str], str],
    parse_retries: int = 1,
) -> list[str]:
    """Round-trip the in-filling prompt; re-asks on unparseable responses."""
    prompt = build_ic_fill_prompt(words)
    last_error: ResponseParseError | None = None
    for _ in range(parse_retries + 1):
        response = chat(prompt)
        try:
            parsed = parse_enumerated_response(response, len(words))
        except ResponseParseError as exc:
            last_error = exc
            continue
        return merge_fill_response(words, parsed)
    raise last_error


def run_ic_transcribe(
    lattice: Lattice,
    chat: Callable[[str], str],
    config: DecoderConfig | None = None,
    parse_retries: int = 1,
) -> list[str]:
    """Round-trip the transcription prompt; re-asks on unparseable responses."""
    prompt = build_ic_transcribe_prompt(lattice, config)
    last_error: ResponseParseError | None = None
    for _ in range(parse_retries + 1):
        response = chat(prompt)
        try:
            return parse_enumerated_response(response, len(lattice))
        except ResponseParseError as exc:
            last_error = exc
            continue
    raise last_error


# ---------------------------------------------------------------------------
# CTC-style merge decoding
# ---------------------------------------------------------------------------


def collapse_repeats(words: Sequence[str]) -> list[str]:
    """Collapse consecutive duplicate words; idempotent."""
    out: list[str] = []
    for w in words:
        if not out or out[-1] != w:
            out.append(w)
    return out


def average_pool(arr: np.ndarray, kernel: int = 5, stride: int = 3) -> np.ndarray:
    """1-D average pooling over rows of distributions, rows renormalized."""
    if kernel < 1 or stride < 1:
        raise ValueError("kernel and stride must be >= 1")
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("expected a 2-D array of row distributions")
    if a.shape[0] < kernel:
        raise ValueError(f"{a.shape[0]} rows are fewer than the kernel {kernel}")
    rows = [a[s : s + kernel].mean(axis=0) for s in range(0, a.shape[0] - kernel + 1, stride)]
    pooled = np.stack(rows)
    return pooled / pooled.sum(axis=1, keepdims=True)


def merge_time_slots(lattice: Lattice) -> np.ndarray:
    """Average duplicate predictions sharing a time slot into one row each.

    Positions without a ``time_slot`` occupy their own slot; annotated slots
    must be non-decreasing and duplicates must be consecutive.
    """
    rows = []
    current_slot: int | None = None
    bucket: list[np.ndarray] = []
    seen_slots: set[int] = set()
    for i, pos in enumerate(lattice.positions):
        slot = pos.time_slot
        if slot is None:
            if bucket:
                rows.append(np.mean(bucket, axis=0))
                bucket, current_slot = [], None
            rows.append(np.asarray(pos.probs))
            continue
        if slot == current_slot:
            bucket.append(np.asarray(pos.probs))
            continue
        if slot in seen_slots:
            raise ValueError(f"time slot {slot} reappears non-consecutively at position {i}")
        if current_slot is not None and slot < current_slot:
            raise ValueError(f"time slots must be non-decreasing, got {slot} after {current_slot}")
        if bucket:
            rows.append(np.mean(bucket, axis=0))
        seen_slots.add(slot)
        current_slot, bucket = slot, [np.asarray(pos.probs)]
    if bucket:
        rows.append(np.mean(bucket, axis=0))
    merged = np.stack(rows)
    return merged / merged.sum(axis=1, keepdims=True)


def ctc_merge_decode(
    lattice: Lattice,
    scorer: LmScorer | None = None,
    config: DecoderConfig | None = None,
    kernel: int = 5,
    stride: int = 3,
) -> list[str]:
    """Merge, pool, argmax, and collapse an overdense lattice.

    Without a scorer this is the greedy variant (collapsed argmax words).
    With a scorer, runs of equal argmax words are averaged into one
    distribution each and the collapsed-length lattice goes through the
    rescored beam search.  Sequences shorter than the kernel skip pooling.
    """
    if lattice.spacing_seconds is None:
        raise ValueError("CTC merge decoding requires spacing_seconds in the lattice")
    merged = merge_time_slots(lattice)
    pooled = average_pool(merged, kernel=kernel, stride=stride) if merged.shape[0] >= kernel else merged
    argmax = [int(np.argmax(row)) for row in pooled]
    words = [lattice.vocab.words[i] for i in argmax]
    if scorer is None:
        return collapse_repeats(words)
    # Average each run of equal argmax words into a single position, then
    # beam-decode the collapsed-length lattice.
    runs: list[tuple[int, int]] = []
    start = 0
    for i in range(1, len(argmax) + 1):
        if i == len(argmax) or argmax[i] != argmax[start]:
            runs.append((start, i))
            start = i
    collapsed_rows = []
    for lo, hi in runs:
        row = pooled[lo:hi].mean(axis=0)
        collapsed_rows.append(row / row.sum())
    collapsed = Lattice(
        vocab=lattice.vocab,
        positions=tuple(PositionDistribution(row) for row in collapsed_rows),
    )
    config = config or DecoderConfig()
    return decode_beam(collapsed, scorer, config)
