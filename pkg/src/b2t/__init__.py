"""Decoding and evaluation toolkit for word-probability lattices.

The library turns per-position word probability distributions — as produced
by a neural speech decoder — into text, and measures how good that text is:

- :mod:`b2t.lattice` — lattice/vocabulary types, normalization, file formats
- :mod:`b2t.lm` — n-gram language model with additive smoothing and backoff
- :mod:`b2t.remote` — chat-completion client and remote LM scorer
- :mod:`b2t.decoder` — greedy, rescored beam, fill, in-context prompting,
  and merge decoding for overdense lattices
- :mod:`b2t.oov` — out-of-vocabulary detection features and classifiers
- :mod:`b2t.metrics` — WER/CER/BLEU-1/ROUGE-1F/METEOR-lite/semantic scoring
- :mod:`b2t.synth` — seeded synthetic lattice generation with known truth
- :mod:`b2t.pooling` — multi-dataset joint-training accuracy analysis
- :mod:`b2t.cli` — the ``b2t`` command-line front door
"""

from .decoder import (
    DecoderConfig,
    average_pool,
    build_ic_fill_prompt,
    build_ic_transcribe_prompt,
    collapse_repeats,
    ctc_merge_decode,
    decode_beam,
    decode_beam_fill,
    decode_greedy,
    merge_fill_response,
    parse_enumerated_response,
    run_ic_fill,
    run_ic_transcribe,
)
from .errors import LatticeFormatError, RemoteServiceError, ResponseParseError
from .lattice import (
    UNK_SENTINEL,
    Lattice,
    PositionDistribution,
    Vocabulary,
    build_vocabulary,
    load_lattice_file,
    load_vocabulary_file,
    normalize_text,
    normalize_word,
    save_lattice_file,
    save_vocabulary_file,
    softmax,
    vocabulary_coverage,
)
from .lm import LmScorer, NGramModel, load_ngram_file, save_ngram_file, train_ngram
from .metrics import (
    EvalReport,
    HashProjectionEmbedder,
    apply_unk_protocol,
    bleu1,
    cer,
    evaluate,
    meteor_lite,
    rouge1f,
    semantic_score,
    wer,
)
from .oov import (
    DetectorHyperparameters,
    OOVDetector,
    auroc,
    extract_features,
    extract_stats,
    flag_positions,
    load_detector_file,
    predict_oov,
    save_detector_file,
    train_oov_detector,
)
from .pooling import (
    AccuracyTable,
    improvement_matrix,
    load_table_file,
    quality_correlation,
    save_table_file,
    select_pool,
    welch_t_test,
)
from .remote import RemoteLm, RemoteLmConfig, RemoteLmScorer, complete_chat
from .synth import (
    SynthConfig,
    generate_corpus_lattices,
    generate_ground_truth,
    generate_lattice,
    generate_synthetic_corpus,
    random_selection_baseline,
    sample_reference,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # errors
    "LatticeFormatError",
    "RemoteServiceError",
    "ResponseParseError",
    # lattice
    "UNK_SENTINEL",
    "Lattice",
    "PositionDistribution",
    "Vocabulary",
    "build_vocabulary",
    "vocabulary_coverage",
    "normalize_text",
    "normalize_word",
    "softmax",
    "save_lattice_file",
    "load_lattice_file",
    "save_vocabulary_file",
    "load_vocabulary_file",
    # lm
    "LmScorer",
    "NGramModel",
    "train_ngram",
    "save_ngram_file",
    "load_ngram_file",
    # remote
    "RemoteLm",
    "RemoteLmConfig",
    "RemoteLmScorer",
    "complete_chat",
    # decoder
    "DecoderConfig",
    "decode_greedy",
    "decode_beam",
    "decode_beam_fill",
    "build_ic_fill_prompt",
    "build_ic_transcribe_prompt",
    "parse_enumerated_response",
    "merge_fill_response",
    "run_ic_fill",
    "run_ic_transcribe",
    "collapse_repeats",
    "average_pool",
    "ctc_merge_decode",
    # oov
    "DetectorHyperparameters",
    "OOVDetector",
    "auroc",
    "extract_features",
    "extract_stats",
    "train_oov_detector",
    "predict_oov",
    "flag_positions",
    "save_detector_file",
    "load_detector_file",
    # metrics
    "EvalReport",
    "HashProjectionEmbedder",
    "apply_unk_protocol",
    "wer",
    "cer",
    "bleu1",
    "rouge1f",
    "meteor_lite",
    "semantic_score",
    "evaluate",
    # synth
    "SynthConfig",
    "generate_synthetic_corpus",
    "sample_reference",
    "generate_ground_truth",
    "generate_lattice",
    "generate_corpus_lattices",
    "random_selection_baseline",
    # pooling
    "AccuracyTable",
    "improvement_matrix",
    "quality_correlation",
    "select_pool",
    "welch_t_test",
    "save_table_file",
    "load_table_file",
]
