"""Data model, normalization, vocabulary building, and file round trips."""

import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from b2t.errors import LatticeFormatError
from b2t.lattice import (
    UNK_SENTINEL,
    Lattice,
    PositionDistribution,
    Vocabulary,
    build_vocabulary,
    load_lattice_file,
    load_lattices,
    load_vocabulary_file,
    normalize_text,
    normalize_word,
    save_lattice_file,
    save_lattices,
    save_vocabulary_file,
    softmax,
    vocabulary_coverage,
)

from conftest import random_lattice, small_vocab


class TestNormalization:
    @pytest.mark.parametrize(
        "raw, expected",
        [
            ("Hello,", "hello"),
            ("Don't!", "don't"),
            ("co-operate", "co-operate"),
            ("'tis", "tis"),
            ("...", ""),
            ("(word)", "word"),
            ("B2T", "b2t"),
            ("  spaced  ", "spaced"),
            ("UPPER-case.", "upper-case"),
            ("", ""),
        ],
    )
    def test_normalize_word(self, raw, expected):
        assert normalize_word(raw) == expected

    def test_normalize_text_drops_empty_tokens(self):
        words = normalize_text("The -- cat, sat?! on ... the mat.")
        assert words == ["the", "cat", "sat", "on", "the", "mat"]

    def test_normalize_text_empty(self):
        assert normalize_text("... !!! ---") == []


class TestVocabulary:
    def test_basic_lookup(self):
        v = Vocabulary(words=("a", "b", "c"), oov_pool=("z",))
        assert len(v) == 3
        assert "b" in v and "z" not in v
        assert v.index_of("c") == 2
        with pytest.raises(KeyError):
            v.index_of("zebra")

    def test_duplicate_word_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(words=("a", "a"))

    def test_pool_overlap_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(words=("a", "b"), oov_pool=("b",))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            Vocabulary(words=())

    def test_build_vocabulary_ranks_by_frequency_then_first_seen(self):
        corpus = ["b", "a", "a", "c", "b", "a", "d", "c"]
        v = build_vocabulary(corpus, 3)
        # a x3, then b and c tie at 2 -> b appeared first
        assert v.words == ("a", "b", "c")
        assert v.oov_pool == ("d",)

    def test_build_vocabulary_size_larger_than_types(self):
        v = build_vocabulary(["x", "y", "x"], 10)
        assert v.words == ("x", "y")
        assert v.oov_pool == ()

    def test_coverage_known_value(self):
        corpus = ["a", "a", "b", "c"]
        v = build_vocabulary(corpus, 1)
        assert vocabulary_coverage(corpus, v) == pytest.approx(0.5)

    def test_vocabulary_file_round_trip(self, tmp_path):
        v = Vocabulary(words=("the", "cat"), oov_pool=("dog",))
        path = tmp_path / "vocab.json"
        save_vocabulary_file(v, path)
        back = load_vocabulary_file(path)
        assert back.words == v.words
        assert back.oov_pool == v.oov_pool


class TestPositionDistribution:
    def test_renormalizes_small_deviation(self):
        p = PositionDistribution(np.array([0.5, 0.5000001]))
        assert p.probs.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_large_deviation(self):
        with pytest.raises(ValueError):
            PositionDistribution(np.array([0.5, 0.6]))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            PositionDistribution(np.array([-0.1, 1.1]))

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            PositionDistribution(np.array([np.nan, 1.0]))

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            PositionDistribution(np.array([]))

    def test_rejects_bad_detector_probability(self):
        with pytest.raises(ValueError):
            PositionDistribution(np.array([1.0]), oov_detected=1.5)

    def test_probs_frozen(self):
        p = PositionDistribution(np.array([0.4, 0.6]))
        with pytest.raises(ValueError):
            p.probs[0] = 0.9

    def test_replace_keeps_unspecified_fields(self):
        p = PositionDistribution(np.array([0.4, 0.6]), oov_truth=True, time_slot=3)
        q = p.replace(oov_detected=0.25)
        assert q.oov_truth is True
        assert q.time_slot == 3
        assert q.oov_detected == 0.25
        assert p.oov_detected is None


class TestLattice:
    def test_width_mismatch_rejected(self):
        v = Vocabulary(words=("a", "b"))
        pos = PositionDistribution(np.array([0.2, 0.3, 0.5]))
        with pytest.raises(ValueError):
            Lattice(vocab=v, positions=(pos,))

    def test_empty_positions_rejected(self):
        with pytest.raises(ValueError):
            Lattice(vocab=Vocabulary(words=("a",)), positions=())

    def test_reference_length_mismatch_rejected(self):
        v = Vocabulary(words=("a", "b"))
        pos = PositionDistribution(np.array([0.5, 0.5]))
        with pytest.raises(ValueError):
            Lattice(vocab=v, positions=(pos,), reference_text=("a", "b"))

    def test_overdense_reference_may_be_shorter(self):
        v = Vocabulary(words=("a", "b"))
        pos = PositionDistribution(np.array([0.5, 0.5]))
        lat = Lattice(
            vocab=v,
            positions=(pos, pos, pos),
            reference_text=("a",),
            spacing_seconds=0.1,
        )
        assert len(lat) == 3

    def test_nonpositive_spacing_rejected(self):
        v = Vocabulary(words=("a",))
        pos = PositionDistribution(np.array([1.0]))
        with pytest.raises(ValueError):
            Lattice(vocab=v, positions=(pos,), spacing_seconds=0.0)


class TestSoftmax:
    def test_uniform_for_equal_scores(self):
        out = softmax(np.array([3.0, 3.0, 3.0, 3.0]))
        np.testing.assert_allclose(out, 0.25)

    def test_shift_invariance(self):
        a = softmax(np.array([1.0, 2.0, 3.0]))
        b = softmax(np.array([101.0, 102.0, 103.0]))
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_low_temperature_sharpens(self):
        out = softmax(np.array([0.45, 0.23, 0.15, 0.11, 0.09]), temperature=0.01)
        assert out[0] > 0.999
        assert out.argmax() == 0

    def test_errors(self):
        with pytest.raises(ValueError):
            softmax(np.array([1.0]), temperature=0.0)
        with pytest.raises(ValueError):
            softmax(np.array([]))
        with pytest.raises(ValueError):
            softmax(np.array([np.inf, 1.0]))

    @settings(max_examples=200, deadline=None)
    @given(
        scores=st.lists(
            st.floats(min_value=-50, max_value=50, allow_nan=False), min_size=1, max_size=16
        ),
        temperature=st.floats(min_value=0.05, max_value=20.0),
    )
    def test_always_a_distribution(self, scores, temperature):
        out = softmax(np.array(scores), temperature=temperature)
        assert out.shape == (len(scores),)
        assert np.all(out >= 0)
        assert out.sum() == pytest.approx(1.0, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(
        scores=st.lists(
            st.floats(min_value=-20, max_value=20, allow_nan=False),
            min_size=2,
            max_size=8,
            unique=True,
        )
    )
    def test_order_preserving(self, scores):
        out = softmax(np.array(scores))
        # scores that differ by less than float precision may tie after exp,
        # so assert the true maximum is never beaten rather than strict argmax
        assert out[int(np.argmax(scores))] == pytest.approx(float(out.max()), abs=1e-12)


class TestFileRoundTrips:
    def test_multi_lattice_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        lats = [random_lattice(rng, 4, small_vocab(6)) for _ in range(3)]
        path = tmp_path / "lat.jsonl"
        save_lattice_file(lats, path)
        back = load_lattice_file(path)
        assert len(back) == 3
        for orig, copy in zip(lats, back):
            assert copy.vocab.words == orig.vocab.words
            assert len(copy) == len(orig)
            for p, q in zip(orig.positions, copy.positions):
                np.testing.assert_allclose(p.probs, q.probs, atol=1e-12)

    def test_reference_and_flags_survive(self, tmp_path):
        v = Vocabulary(words=("a", "b"), oov_pool=("c",))
        positions = (
            PositionDistribution(np.array([0.9, 0.1]), oov_truth=False),
            PositionDistribution(np.array([0.2, 0.8]), oov_truth=True, oov_detected=0.7),
        )
        lat = Lattice(vocab=v, positions=positions, reference_text=("a", "c"))
        path = tmp_path / "one.jsonl"
        save_lattice_file([lat], path)
        back = load_lattice_file(path)[0]
        assert back.reference_text == ("a", "c")
        assert back.positions[1].oov_truth is True
        assert back.positions[1].oov_detected == pytest.approx(0.7)

    def test_sparse_probs(self):
        text = (
            '{"format_version": 1, "vocab": ["a", "b", "c", "d"]}\n'
            '{"probs": {"1": 0.75, "3": 0.25}}\n'
        )
        lat = load_lattices(io.StringIO(text))[0]
        np.testing.assert_allclose(lat.positions[0].probs, [0.0, 0.75, 0.0, 0.25])

    def test_cosine_scores_converted(self):
        text = (
            '{"format_version": 1, "vocab": ["a", "b"], "score_kind": "cosine", '
            '"conversion_temperature": 0.5}\n'
            '{"probs": [0.9, 0.1]}\n'
        )
        lat = load_lattices(io.StringIO(text))[0]
        expected = softmax(np.array([0.9, 0.1]), temperature=0.5)
        np.testing.assert_allclose(lat.positions[0].probs, expected, atol=1e-12)

    def test_mild_mass_deviation_renormalized(self):
        text = (
            '{"format_version": 1, "vocab": ["a", "b"]}\n'
            '{"probs": [0.5004, 0.5]}\n'
        )
        lat = load_lattices(io.StringIO(text))[0]
        assert lat.positions[0].probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_large_mass_deviation_rejected_with_line(self):
        text = (
            '{"format_version": 1, "vocab": ["a", "b"]}\n'
            '{"probs": [0.5, 0.6]}\n'
        )
        with pytest.raises(LatticeFormatError) as err:
            load_lattices(io.StringIO(text))
        assert err.value.line_number == 2

    def test_bad_json_rejected_with_line(self):
        text = '{"format_version": 1, "vocab": ["a"]}\n{not json\n'
        with pytest.raises(LatticeFormatError) as err:
            load_lattices(io.StringIO(text))
        assert err.value.line_number == 2

    def test_missing_version_rejected(self):
        with pytest.raises(LatticeFormatError):
            load_lattices(io.StringIO('{"vocab": ["a"]}\n{"probs": [1.0]}\n'))

    def test_header_without_positions_rejected(self):
        with pytest.raises(LatticeFormatError):
            load_lattices(io.StringIO('{"format_version": 1, "vocab": ["a"]}\n'))

    def test_empty_stream_rejected(self):
        with pytest.raises(LatticeFormatError):
            load_lattices(io.StringIO(""))

    def test_partial_refs_rejected(self):
        text = (
            '{"format_version": 1, "vocab": ["a"]}\n'
            '{"probs": [1.0], "ref": "a"}\n'
            '{"probs": [1.0]}\n'
        )
        with pytest.raises(LatticeFormatError):
            load_lattices(io.StringIO(text))

    def test_save_is_deterministic(self):
        rng = np.random.default_rng(5)
        lat = random_lattice(rng, 3, small_vocab(4))
        first, second = io.StringIO(), io.StringIO()
        save_lattices([lat], first)
        save_lattices([lat], second)
        assert first.getvalue() == second.getvalue()

    def test_sentinel_is_stable(self):
        assert UNK_SENTINEL == "<UNK>"
        assert normalize_word(UNK_SENTINEL) != UNK_SENTINEL
