"""Core data model: vocabularies, per-position word distributions, lattices.

A lattice is an ordered sequence of probability distributions over a frozen
decoding vocabulary, one distribution per word slot, optionally annotated with
ground-truth out-of-vocabulary flags, detector probabilities, and a reference
transcript.

File format (UTF-8, line oriented, one JSON object per line):

    line 1   header  {"format_version": 1, "vocab": [...], "oov_pool": [...],
                      "score_kind": "prob" | "cosine",
                      "spacing_seconds": <real, optional>,
                      "conversion_temperature": <real, optional, default 1.0>,
                      "reference_text": [...] (optional)}
    line 2+  position {"probs": [p0, ...] | {"17": 0.9, ...},
                      "oov_truth": bool (optional),
                      "oov_detected": real (optional),
                      "ref": word (optional),
                      "t": int time slot (optional, overdense lattices only)}

A blank line separates consecutive lattices in a multi-lattice file.  Sparse
``probs`` mappings assign zero to unlisted indices.  Records whose mass
deviates from 1 by at most 1e-3 are renormalized; larger deviations are
rejected with the offending line number.  ``score_kind: "cosine"`` marks raw
similarity scores which are converted to probabilities on load via a softmax
at ``conversion_temperature``.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence, TextIO

import numpy as np

from .errors import LatticeFormatError

__all__ = [
    "UNK_SENTINEL",
    "FORMAT_VERSION",
    "Vocabulary",
    "PositionDistribution",
    "Lattice",
    "normalize_word",
    "normalize_text",
    "build_vocabulary",
    "vocabulary_coverage",
    "softmax",
    "save_lattices",
    "load_lattices",
    "save_lattice_file",
    "load_lattice_file",
    "save_vocabulary_file",
    "load_vocabulary_file",
]

#: Sentinel emitted for positions whose true word is outside the vocabulary.
UNK_SENTINEL = "<UNK>"

FORMAT_VERSION = 1

_WORD_RE = re.compile(r"[a-z0-9'-]+")


def normalize_word(raw: str) -> str:
    """Normalize one token: lowercase, strip surrounding punctuation.

    Internal apostrophes and hyphens survive ("Don't!" -> "don't"); a token
    that is pure punctuation normalizes to the empty string.
    """
    pieces = _WORD_RE.findall(raw.lower())
    return "-".join(pieces).strip("'-") if pieces else ""


def normalize_text(text: str) -> list[str]:
    """Normalize running text into a word list, dropping empty tokens."""
    out = []
    for raw in text.split():
        word = normalize_word(raw)
        if word:
            out.append(word)
    return out


@dataclass(frozen=True)
class Vocabulary:
    """A frozen, ordered decoding vocabulary plus the out-of-vocabulary pool.

    ``words`` is ordered (index = identity everywhere in the engine) and
    duplicate-free; ``oov_pool`` holds known non-vocabulary words and is
    disjoint from ``words``.
    """

    words: tuple[str, ...]
    oov_pool: tuple[str, ...] = ()
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.words:
            raise ValueError("vocabulary must contain at least one word")
        index: dict[str, int] = {}
        for i, w in enumerate(self.words):
            if not w:
                raise ValueError("vocabulary words must be non-empty")
            if w in index:
                raise ValueError(f"duplicate vocabulary word {w!r}")
            index[w] = i
        pool_seen = set()
        for w in self.oov_pool:
            if w in index:
                raise ValueError(f"oov_pool word {w!r} is also in the vocabulary")
            if w in pool_seen:
                raise ValueError(f"duplicate oov_pool word {w!r}")
            pool_seen.add(w)
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self._index

    def index_of(self, word: str) -> int:
        try:
            return self._index[word]
        except KeyError:
            raise KeyError(f"word {word!r} is not in the vocabulary") from None


class PositionDistribution:
    """A probability distribution over the vocabulary at one word slot.

    ``probs`` is validated non-negative, must sum to 1 within 1e-6, and is
    renormalized to machine precision and frozen.  ``oov_truth`` is the
    ground-truth out-of-vocabulary flag when known; ``oov_detected`` is a
    detector probability in [0, 1]; ``time_slot`` marks the time cell of an
    overdense lattice so that duplicate predictions for one slot are
    representable.
    """

    __slots__ = ("probs", "oov_truth", "oov_detected", "time_slot")

    def __init__(
        self,
        probs: Sequence[float] | np.ndarray,
        oov_truth: bool | None = None,
        oov_detected: float | None = None,
        time_slot: int | None = None,
    ):
        arr = np.asarray(probs, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("probs must be a non-empty 1-D array")
        if not np.all(np.isfinite(arr)):
            raise ValueError("probs must be finite")
        if np.any(arr < 0):
            raise ValueError("probs must be non-negative")
        total = float(arr.sum())
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"probs must sum to 1 within 1e-6, got {total!r}")
        arr = arr / total
        arr.setflags(write=False)
        if oov_detected is not None and not (0.0 <= oov_detected <= 1.0):
            raise ValueError(f"oov_detected must lie in [0, 1], got {oov_detected!r}")
        self.probs = arr
        self.oov_truth = oov_truth
        self.oov_detected = oov_detected
        self.time_slot = time_slot

    def replace(self, **changes) -> "PositionDistribution":
        kwargs = {
            "probs": self.probs,
            "oov_truth": self.oov_truth,
            "oov_detected": self.oov_detected,
            "time_slot": self.time_slot,
        }
        kwargs.update(changes)
        return PositionDistribution(**kwargs)

    def __repr__(self) -> str:
        return (
            f"PositionDistribution(n={self.probs.size}, top={float(self.probs.max()):.4f}, "
            f"oov_truth={self.oov_truth}, oov_detected={self.oov_detected})"
        )


@dataclass(frozen=True)
class Lattice:
    """An ordered sequence of position distributions over one vocabulary."""

    vocab: Vocabulary
    positions: tuple[PositionDistribution, ...]
    reference_text: tuple[str, ...] | None = None
    spacing_seconds: float | None = None

    def __post_init__(self):
        if not self.positions:
            raise ValueError("lattice must contain at least one position")
        width = len(self.vocab)
        for i, pos in enumerate(self.positions):
            if pos.probs.size != width:
                raise ValueError(
                    f"position {i} has {pos.probs.size} entries, vocabulary has {width}"
                )
        if self.spacing_seconds is not None and self.spacing_seconds <= 0:
            raise ValueError("spacing_seconds must be positive")
        if (
            self.reference_text is not None
            and self.spacing_seconds is None
            and len(self.reference_text) != len(self.positions)
        ):
            raise ValueError(
                f"reference length {len(self.reference_text)} != "
                f"{len(self.positions)} positions"
            )

    def __len__(self) -> int:
        return len(self.positions)


def build_vocabulary(corpus: Sequence[str], size: int) -> Vocabulary:
    """Build a vocabulary of the ``size`` most frequent corpus words.

    Frequency ties break toward earlier first occurrence in the corpus.  The
    remaining unique corpus words become the out-of-vocabulary pool.  The
    corpus is expected to be already normalized (see ``normalize_text``).
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if size < 1:
        raise ValueError(f"size must be >= 1, got {size}")
    counts = Counter(corpus)
    first_seen: dict[str, int] = {}
    for i, w in enumerate(corpus):
        if w not in first_seen:
            first_seen[w] = i
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    words = tuple(ranked[:size])
    pool = tuple(ranked[size:])
    return Vocabulary(words=words, oov_pool=pool)


def vocabulary_coverage(corpus: Sequence[str], vocab: Vocabulary) -> float:
    """Fraction of corpus tokens covered by the vocabulary."""
    if not corpus:
        raise ValueError("corpus must be non-empty")
    hits = sum(1 for w in corpus if w in vocab)
    return hits / len(corpus)


def softmax(scores: Sequence[float] | np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Temperature softmax with max-subtraction for numerical stability."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature!r}")
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("scores must be non-empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    z = (arr - arr.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------


def _dump_position(pos: PositionDistribution) -> str:
    record: dict = {"probs": [float(p) for p in pos.probs]}
    if pos.oov_truth is not None:
        record["oov_truth"] = pos.oov_truth
    if pos.oov_detected is not None:
        record["oov_detected"] = float(pos.oov_detected)
    if pos.time_slot is not None:
        record["t"] = int(pos.time_slot)
    return json.dumps(record, sort_keys=True)


def save_lattices(lattices: Iterable[Lattice], stream: TextIO) -> None:
    """Write lattices to ``stream``, blank-line separated."""
    for k, lat in enumerate(lattices):
        if k:
            stream.write("\n")
        header: dict = {
            "format_version": FORMAT_VERSION,
            "vocab": list(lat.vocab.words),
            "oov_pool": list(lat.vocab.oov_pool),
            "score_kind": "prob",
        }
        if lat.spacing_seconds is not None:
            header["spacing_seconds"] = float(lat.spacing_seconds)
        dense_refs = (
            lat.reference_text is not None
            and len(lat.reference_text) == len(lat.positions)
        )
        if lat.reference_text is not None and not dense_refs:
            header["reference_text"] = list(lat.reference_text)
        stream.write(json.dumps(header, sort_keys=True) + "\n")
        for i, pos in enumerate(lat.positions):
            line = _dump_position(pos)
            if dense_refs:
                record = json.loads(line)
                record["ref"] = lat.reference_text[i]
                line = json.dumps(record, sort_keys=True)
            stream.write(line + "\n")


def _parse_probs(raw, width: int, line_number: int) -> np.ndarray:
    if isinstance(raw, dict):
        arr = np.zeros(width, dtype=np.float64)
        for key, value in raw.items():
            try:
                idx = int(key)
            except (TypeError, ValueError):
                raise LatticeFormatError(f"sparse index {key!r} is not an integer", line_number)
            if not 0 <= idx < width:
                raise LatticeFormatError(
                    f"sparse index {idx} out of range for vocabulary of {width}", line_number
                )
            arr[idx] = float(value)
    elif isinstance(raw, list):
        arr = np.asarray(raw, dtype=np.float64)
        if arr.ndim != 1 or arr.size != width:
            raise LatticeFormatError(
                f"probs has {arr.size} entries, vocabulary has {width}", line_number
            )
    else:
        raise LatticeFormatError("probs must be a list or a sparse index mapping", line_number)
    if not np.all(np.isfinite(arr)):
        raise LatticeFormatError("probs must be finite", line_number)
    if np.any(arr < 0):
        raise LatticeFormatError("probs must be non-negative", line_number)
    return arr


def _finish_lattice(
    header: dict,
    records: list[tuple[dict, int]],
    header_line: int,
) -> Lattice:
    if not records:
        raise LatticeFormatError("lattice has a header but no positions", header_line)
    try:
        vocab = Vocabulary(words=tuple(header["vocab"]), oov_pool=tuple(header.get("oov_pool", ())))
    except (KeyError, TypeError, ValueError) as exc:
        raise LatticeFormatError(f"bad vocabulary in header: {exc}", header_line)
    score_kind = header.get("score_kind", "prob")
    if score_kind not in ("prob", "cosine"):
        raise LatticeFormatError(f"unknown score_kind {score_kind!r}", header_line)
    temperature = header.get("conversion_temperature", 1.0)
    if not isinstance(temperature, (int, float)) or temperature <= 0:
        raise LatticeFormatError(
            f"conversion_temperature must be positive, got {temperature!r}", header_line
        )
    spacing = header.get("spacing_seconds")
    if spacing is not None and (not isinstance(spacing, (int, float)) or spacing <= 0):
        raise LatticeFormatError(f"spacing_seconds must be positive, got {spacing!r}", header_line)

    width = len(vocab)
    positions = []
    refs: list[str] = []
    for record, line_number in records:
        if "probs" not in record:
            raise LatticeFormatError("position record is missing 'probs'", line_number)
        arr = _parse_probs(record["probs"], width, line_number)
        if score_kind == "cosine":
            arr = softmax(arr, temperature=float(temperature))
        else:
            total = float(arr.sum())
            if abs(total - 1.0) > 1e-3:
                raise LatticeFormatError(
                    f"probs sum to {total!r}, deviating from 1 by more than 1e-3", line_number
                )
            if total <= 0:
                raise LatticeFormatError("probs must carry positive mass", line_number)
            arr = arr / total
        oov_detected = record.get("oov_detected")
        if oov_detected is not None and not (
            isinstance(oov_detected, (int, float)) and 0.0 <= oov_detected <= 1.0
        ):
            raise LatticeFormatError(
                f"oov_detected must lie in [0, 1], got {oov_detected!r}", line_number
            )
        time_slot = record.get("t")
        if time_slot is not None and not isinstance(time_slot, int):
            raise LatticeFormatError(f"time slot 't' must be an integer, got {time_slot!r}", line_number)
        try:
            positions.append(
                PositionDistribution(
                    arr,
                    oov_truth=record.get("oov_truth"),
                    oov_detected=None if oov_detected is None else float(oov_detected),
                    time_slot=time_slot,
                )
            )
        except ValueError as exc:
            raise LatticeFormatError(str(exc), line_number)
        if "ref" in record:
            refs.append(str(record["ref"]))

    reference: tuple[str, ...] | None = None
    if "reference_text" in header:
        reference = tuple(str(w) for w in header["reference_text"])
    elif refs:
        if len(refs) != len(positions):
            raise LatticeFormatError(
                f"{len(refs)} positions carry 'ref' but the lattice has {len(positions)}; "
                "references must cover every position or none",
                header_line,
            )
        reference = tuple(refs)
    try:
        return Lattice(
            vocab=vocab,
            positions=tuple(positions),
            reference_text=reference,
            spacing_seconds=None if spacing is None else float(spacing),
        )
    except ValueError as exc:
        raise LatticeFormatError(str(exc), header_line)


def load_lattices(stream: TextIO) -> list[Lattice]:
    """Parse a (possibly multi-lattice) stream; errors carry line numbers."""
    lattices: list[Lattice] = []
    header: dict | None = None
    header_line = 0
    records: list[tuple[dict, int]] = []
    for line_number, raw_line in enumerate(stream, start=1):
        line = raw_line.strip()
        if not line:
            if header is not None:
                lattices.append(_finish_lattice(header, records, header_line))
                header, records = None, []
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LatticeFormatError(f"invalid JSON: {exc.msg}", line_number)
        if not isinstance(obj, dict):
            raise LatticeFormatError("every record must be a JSON object", line_number)
        if header is None:
            if "vocab" not in obj:
                raise LatticeFormatError("expected a lattice header with 'vocab'", line_number)
            version = obj.get("format_version")
            if version != FORMAT_VERSION:
                raise LatticeFormatError(
                    f"unsupported format_version {version!r} (expected {FORMAT_VERSION})",
                    line_number,
                )
            header, header_line = obj, line_number
        else:
            records.append((obj, line_number))
    if header is not None:
        lattices.append(_finish_lattice(header, records, header_line))
    if not lattices:
        raise LatticeFormatError("stream contains no lattices", 1)
    return lattices


def save_lattice_file(lattices: Sequence[Lattice], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        save_lattices(lattices, fh)


def load_lattice_file(path) -> list[Lattice]:
    with open(path, "r", encoding="utf-8") as fh:
        return load_lattices(fh)


def save_vocabulary_file(vocab: Vocabulary, path) -> None:
    payload = {
        "format_version": FORMAT_VERSION,
        "words": list(vocab.words),
        "oov_pool": list(vocab.oov_pool),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=0)
        fh.write("\n")


def load_vocabulary_file(path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise LatticeFormatError(f"invalid JSON in vocabulary file: {exc.msg}", exc.lineno)
    if not isinstance(payload, dict) or "words" not in payload:
        raise LatticeFormatError("vocabulary file must be an object with 'words'", 1)
    if payload.get("format_version") != FORMAT_VERSION:
        raise LatticeFormatError(
            f"unsupported format_version {payload.get('format_version')!r}", 1
        )
    try:
        return Vocabulary(
            words=tuple(payload["words"]),
            oov_pool=tuple(payload.get("oov_pool", ())),
        )
    except ValueError as exc:
        raise LatticeFormatError(str(exc), 1)
