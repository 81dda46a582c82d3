"""Command-line front door orchestrating the library for batch pipelines.

Every parameter resolves through the same chain — command-line flag, then the
``--config`` JSON file's per-subcommand section, then an environment variable
where one is defined, then the built-in default — and the fully resolved
parameter set is echoed to ``runconfig.json`` in the output directory so any
run can be reproduced from its artifacts alone.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 remote-service
failure.
"""

from __future__ import annotations

import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import click
import numpy as np

from .decoder import (
    DecoderConfig,
    build_ic_fill_prompt,
    build_ic_transcribe_prompt,
    ctc_merge_decode,
    decode_beam,
    decode_beam_fill,
    decode_greedy,
    run_ic_fill,
    run_ic_transcribe,
)
from .errors import LatticeFormatError, RemoteServiceError, ResponseParseError
from .lattice import (
    UNK_SENTINEL,
    Vocabulary,
    build_vocabulary,
    load_lattice_file,
    load_vocabulary_file,
    normalize_text,
    save_lattice_file,
    save_vocabulary_file,
    vocabulary_coverage,
)
from .lm import load_ngram_file, save_ngram_file, train_ngram
from .metrics import apply_unk_protocol, evaluate
from .oov import (
    DetectorHyperparameters,
    auroc,
    flag_positions,
    lattice_features,
    load_detector_file,
    save_detector_file,
    train_oov_detector,
)
from .pooling import (
    improvement_matrix,
    load_table_file,
    quality_correlation,
    select_pool,
)
from .remote import RemoteLm, RemoteLmConfig, RemoteLmScorer
from .synth import (
    SynthConfig,
    generate_corpus_lattices,
    generate_ground_truth,
    generate_lattice,
    generate_synthetic_corpus,
)

__all__ = ["cli", "main", "entry"]

_VERSION = "0.1.0"

# Environment fallbacks consulted between the config file and the defaults.
_ENV_VARS = {"seed": "B2T_SEED", "jobs": "B2T_JOBS"}

_DECODE_METHODS = (
    "greedy",
    "beam",
    "beam-fill",
    "ic-fill",
    "ic-transcribe",
    "ctc-greedy",
    "ctc-beam",
)

_REMOTE_METHODS = ("ic-fill", "ic-transcribe")


# ---------------------------------------------------------------------------
# Parameter resolution and run-config echo
# ---------------------------------------------------------------------------


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise LatticeFormatError("config file must hold a JSON object", 1)
    return data


def _section_name(ctx: click.Context) -> str:
    # "b2t oov train" -> "oov-train"; "b2t decode" -> "decode"
    parts = ctx.command_path.split()[1:]
    return "-".join(parts)


def _convert(param: click.Parameter, value, ctx: click.Context):
    if value is None:
        return None
    return param.type.convert(str(value), param, ctx)


def _resolve(ctx: click.Context) -> dict:
    """Apply the precedence chain to every parameter of the current command."""
    file_section = (ctx.obj or {}).get("config", {}).get(_section_name(ctx), {})
    if not isinstance(file_section, dict):
        raise LatticeFormatError(
            f"config section {_section_name(ctx)!r} must be a JSON object", 1
        )
    resolved = {}
    for param in ctx.command.params:
        name = param.name
        if ctx.get_parameter_source(name) == click.core.ParameterSource.COMMANDLINE:
            resolved[name] = ctx.params[name]
        elif name in file_section:
            resolved[name] = _convert(param, file_section[name], ctx)
        elif name in _ENV_VARS and _ENV_VARS[name] in os.environ:
            resolved[name] = _convert(param, os.environ[_ENV_VARS[name]], ctx)
        else:
            resolved[name] = ctx.params[name]
    unknown = set(file_section) - {p.name for p in ctx.command.params}
    if unknown:
        raise LatticeFormatError(
            f"config section {_section_name(ctx)!r} has unknown keys {sorted(unknown)}", 1
        )
    return resolved


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, tuple):
        return list(value)
    return value


def _require(p: dict, key: str, flag: str) -> None:
    """Required-after-resolution: the config file may supply it too."""
    if p[key] is None:
        raise click.UsageError(f"{flag} is required (pass the flag or set it in the config file)")


def _prepare_out(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_runconfig(out_dir: Path, ctx: click.Context, params: dict) -> None:
    payload = {
        "command": _section_name(ctx),
        "parameters": {k: _jsonable(v) for k, v in params.items()},
    }
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    (out_dir / "runconfig.json").write_text(text, encoding="utf-8")


def _write_text(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _read_corpus(path) -> list[str]:
    corpus = normalize_text(Path(path).read_text(encoding="utf-8"))
    if not corpus:
        raise LatticeFormatError(f"{path} normalizes to an empty word stream", 1)
    return corpus


def _read_transcripts(path) -> list[list[str]]:
    text = Path(path).read_text(encoding="utf-8")
    return [line.split() for line in text.splitlines()]


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _spawned_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent per-item generators; stable under any worker schedule."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(count)]


def _map_ordered(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Group
# ---------------------------------------------------------------------------


@click.group(name="b2t")
@click.version_option(version=_VERSION, prog_name="b2t")
@click.option(
    "--config",
    "config_path",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="JSON file with per-subcommand parameter sections (e.g. {\"decode\": {...}}).",
)
@click.pass_context
def cli(ctx, config_path):
    """Decode, evaluate, and analyze word-probability lattices."""
    ctx.obj = {"config": _load_config_file(config_path)}


# ---------------------------------------------------------------------------
# vocab
# ---------------------------------------------------------------------------


@cli.command("vocab")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--size", type=int, default=250, show_default=True, help="Vocabulary size (most frequent words).")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_vocab(ctx, **_):
    """Build a frequency vocabulary from a text corpus."""
    p = _resolve(ctx)
    _require(p, "out", "--out")
    corpus = _read_corpus(p["corpus"])
    vocab = build_vocabulary(corpus, p["size"])
    coverage = vocabulary_coverage(corpus, vocab)
    out_dir = _prepare_out(p["out"])
    save_vocabulary_file(vocab, out_dir / "vocabulary.json")
    _echo_runconfig(out_dir, ctx, p)
    click.echo(
        f"wrote {len(vocab)} words to {out_dir / 'vocabulary.json'} "
        f"(corpus coverage {coverage:.1%}, oov pool {len(vocab.oov_pool)})"
    )


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------


@cli.command("synth")
@click.option("--corpus", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Source text; defaults to the bundled corpus.")
@click.option("--count", type=int, default=10, show_default=True, help="Number of lattices.")
@click.option("--vocab-size", type=int, default=250, show_default=True)
@click.option("--length", type=int, default=64, show_default=True, help="Words per lattice.")
@click.option("--top1", type=float, default=0.3, show_default=True,
              help="Calibrated probability that the true word ranks first.")
@click.option("--concentration", type=float, default=0.5, show_default=True,
              help="Dirichlet concentration of the confusion noise.")
@click.option("--oov-concentration", type=float, default=None,
              help="Dirichlet concentration at OOV positions (defaults to --concentration).")
@click.option("--uniform-truth", is_flag=True, default=False,
              help="Draw reference words uniformly instead of sampling corpus windows.")
@click.option("--oov-rate", type=float, default=0.0, show_default=True,
              help="OOV fraction under --uniform-truth (corpus windows carry their true rate).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_synth(ctx, **_):
    """Generate seeded synthetic lattices with known references."""
    p = _resolve(ctx)
    _require(p, "out", "--out")
    corpus = _read_corpus(p["corpus"]) if p["corpus"] else generate_synthetic_corpus()
    vocab = build_vocabulary(corpus, p["vocab_size"])
    config = SynthConfig(
        vocab_size=p["vocab_size"],
        sequence_length=p["length"],
        top1_accuracy=p["top1"],
        concentration=p["concentration"],
        oov_rate=p["oov_rate"],
        oov_concentration=p["oov_concentration"],
        seed=p["seed"],
    )
    rng = _rng(p["seed"])
    if p["uniform_truth"]:
        lattices = [
            generate_lattice(generate_ground_truth(vocab, config, rng), vocab, config, rng)
            for _ in range(p["count"])
        ]
    else:
        lattices = generate_corpus_lattices(corpus, vocab, config, rng, p["count"])
    out_dir = _prepare_out(p["out"])
    save_lattice_file(lattices, out_dir / "lattices.jsonl")
    save_vocabulary_file(vocab, out_dir / "vocabulary.json")
    _echo_runconfig(out_dir, ctx, p)
    oov_positions = sum(
        1 for lat in lattices for pos in lat.positions if pos.oov_truth
    )
    click.echo(
        f"wrote {len(lattices)} lattices ({oov_positions} OOV positions) to "
        f"{out_dir / 'lattices.jsonl'}"
    )


# ---------------------------------------------------------------------------
# lm-train
# ---------------------------------------------------------------------------


@cli.command("lm-train")
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--order", type=int, default=3, show_default=True, help="n-gram order.")
@click.option("--alpha", type=float, default=0.1, show_default=True, help="Additive smoothing.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_lm_train(ctx, **_):
    """Train the n-gram rescorer on a text corpus."""
    p = _resolve(ctx)
    _require(p, "out", "--out")
    corpus = _read_corpus(p["corpus"])
    model = train_ngram(corpus, p["order"], smoothing_alpha=p["alpha"])
    out_dir = _prepare_out(p["out"])
    save_ngram_file(model, out_dir / "ngram.json")
    _echo_runconfig(out_dir, ctx, p)
    click.echo(
        f"trained order-{model.order} model on {len(corpus)} words "
        f"({len(model.vocabulary)} unique) to {out_dir / 'ngram.json'}"
    )


# ---------------------------------------------------------------------------
# decode
# ---------------------------------------------------------------------------


def _decoder_config(p: dict, method: str) -> DecoderConfig:
    oov_source = p["oov_source"].replace("-", "_")
    if method in ("beam-fill", "ic-fill", "ic-transcribe") and oov_source == "none":
        oov_source = "ground_truth"
    return DecoderConfig(
        beam_width=p["beam_width"],
        rescorer_weight=p["rescorer_weight"],
        context_limit=p["context_limit"],
        candidates_per_step=p["candidates_per_step"],
        fill_mode=p["fill_mode"].replace("-", "_"),
        oov_source=oov_source,
        detector_threshold=p["detector_threshold"],
        rescore_mode=p["rescore_mode"].replace("-", "_"),
        sharpen_temperature=p["sharpen_temperature"],
        top_pairs=p["top_pairs"],
    )


def _remote_config(p: dict) -> RemoteLmConfig:
    overrides = {}
    if p["model"]:
        overrides["model_name"] = p["model"]
    if p["max_tokens"] is not None:
        overrides["max_tokens"] = p["max_tokens"]
    try:
        return RemoteLmConfig.from_env(**overrides)
    except ValueError as exc:
        raise click.UsageError(f"remote service is not configured: {exc}")


def _ic_fill_words(lattice, scorer, config: DecoderConfig) -> list[str]:
    """The pre-fill pass: decode with sentinels at flagged positions."""
    base = replace(config, fill_mode="unk_sentinel")
    if scorer is None:
        return decode_greedy(lattice, base)
    return decode_beam(lattice, scorer, base)


@cli.command("decode")
@click.argument("lattices", type=click.Path(exists=True, dir_okay=False))
@click.option("--method", type=click.Choice(_DECODE_METHODS), default="beam", show_default=True)
@click.option("--lm", "lm_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Trained n-gram file used as the rescorer.")
@click.option("--filler-lm", type=click.Path(exists=True, dir_okay=False), default=None,
              help="n-gram used to fill flagged positions (beam-fill; defaults to --lm).")
@click.option("--remote-scorer", is_flag=True, default=False,
              help="Rescore with the remote service (B2T_LLM_*) instead of --lm.")
@click.option("--token-beam", is_flag=True, default=False,
              help="Remote scorer: grow words token by token instead of the single-token shortcut.")
@click.option("--beam-width", type=int, default=5, show_default=True)
@click.option("--rescorer-weight", type=float, default=1.5, show_default=True,
              help="Fusion weight on the rescorer log-probability.")
@click.option("--context-limit", type=int, default=8, show_default=True)
@click.option("--candidates-per-step", type=int, default=5, show_default=True)
@click.option("--fill-mode", type=click.Choice(["none", "unk-sentinel", "random"]),
              default="none", show_default=True, help="Treatment of flagged positions (greedy/beam).")
@click.option("--oov-source", type=click.Choice(["none", "ground-truth", "detector"]),
              default="none", show_default=True,
              help="Where OOV flags come from; fill methods default to ground-truth.")
@click.option("--detector-threshold", type=float, default=0.5, show_default=True)
@click.option("--rescore-mode", type=click.Choice(["incremental", "whole-prefix"]),
              default="incremental", show_default=True)
@click.option("--sharpen-temperature", type=float, default=0.01, show_default=True,
              help="Softmax temperature for transcribe-prompt probabilities.")
@click.option("--top-pairs", type=int, default=5, show_default=True,
              help="Candidate pairs listed per position in the transcribe prompt.")
@click.option("--pool-kernel", type=int, default=5, show_default=True, help="CTC pooling kernel.")
@click.option("--pool-stride", type=int, default=3, show_default=True, help="CTC pooling stride.")
@click.option("--model", default="", help="Remote model name override.")
@click.option("--max-tokens", type=int, default=None, help="Remote completion token cap.")
@click.option("--thinking-budget", type=int, default=None, help="Remote thinking-token budget.")
@click.option("--dry-run", is_flag=True, default=False,
              help="ic-fill/ic-transcribe: print the constructed prompt and exit.")
@click.option("--jobs", type=int, default=1, show_default=True, help="Parallel decode workers.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None,
              help="Output directory (optional with --dry-run).")
@click.pass_context
def cmd_decode(ctx, **_):
    """Decode a lattice file into a transcript (one sequence per line)."""
    p = _resolve(ctx)
    method = p["method"]
    if p["dry_run"] and method not in _REMOTE_METHODS:
        raise click.UsageError("--dry-run only applies to ic-fill and ic-transcribe")
    if p["out"] is None and not p["dry_run"]:
        raise click.UsageError("--out is required unless --dry-run")
    config = _decoder_config(p, method)

    lattices = load_lattice_file(p["lattices"])
    if not lattices:
        raise LatticeFormatError(f"{p['lattices']} holds no lattices", 1)

    scorer = None
    remote_client: RemoteLm | None = None
    if p["lm_path"]:
        scorer = load_ngram_file(p["lm_path"])
    elif p["remote_scorer"]:
        remote_client = RemoteLm(_remote_config(p))
        scorer = RemoteLmScorer(remote_client, use_token_beam=p["token_beam"])
    if (
        scorer is None
        and config.rescorer_weight > 0
        and method in ("beam", "beam-fill", "ctc-beam")
    ):
        raise click.UsageError(
            f"method {method} needs --lm or --remote-scorer (or --rescorer-weight 0)"
        )

    filler = scorer
    if p["filler_lm"]:
        filler = load_ngram_file(p["filler_lm"])
    if method == "beam-fill" and filler is None:
        raise click.UsageError("beam-fill needs --filler-lm or --lm")

    try:
        if p["dry_run"]:
            prompts = []
            for lattice in lattices:
                if method == "ic-fill":
                    words = _ic_fill_words(lattice, scorer, config)
                    prompts.append(build_ic_fill_prompt(words))
                else:
                    prompts.append(build_ic_transcribe_prompt(lattice, config))
            sys.stdout.write("\n\n".join(prompts) + "\n")
            if p["out"] is not None:
                out_dir = _prepare_out(p["out"])
                for i, prompt in enumerate(prompts):
                    _write_text(out_dir / f"prompt_{i:03d}.txt", prompt + "\n")
                _echo_runconfig(out_dir, ctx, p)
            return

        chat = None
        if method in _REMOTE_METHODS:
            if remote_client is None:
                remote_client = RemoteLm(_remote_config(p))
            budget = p["thinking_budget"]
            chat = lambda prompt: remote_client.complete_chat(prompt, thinking_budget=budget)

        rngs = _spawned_rngs(p["seed"], len(lattices))

        def decode_one(item):
            index, lattice = item
            if method == "greedy":
                return decode_greedy(lattice, config, rngs[index])
            if method == "beam":
                return decode_beam(lattice, scorer, config, rngs[index])
            if method == "beam-fill":
                return decode_beam_fill(lattice, scorer, filler, replace(config, fill_mode="during_beam"))
            if method == "ic-fill":
                words = _ic_fill_words(lattice, scorer, config)
                return run_ic_fill(words, chat)
            if method == "ic-transcribe":
                return run_ic_transcribe(lattice, chat, config)
            if method == "ctc-greedy":
                return ctc_merge_decode(lattice, None, config, kernel=p["pool_kernel"], stride=p["pool_stride"])
            return ctc_merge_decode(lattice, scorer, config, kernel=p["pool_kernel"], stride=p["pool_stride"])

        transcripts = _map_ordered(decode_one, list(enumerate(lattices)), p["jobs"])
    finally:
        if remote_client is not None:
            remote_client.close()

    out_dir = _prepare_out(p["out"])
    _write_text(out_dir / "transcript.txt", "\n".join(" ".join(t) for t in transcripts) + "\n")
    _echo_runconfig(out_dir, ctx, p)
    click.echo(f"decoded {len(transcripts)} sequences ({method}) to {out_dir / 'transcript.txt'}")


# ---------------------------------------------------------------------------
# oov
# ---------------------------------------------------------------------------


@cli.group("oov")
def cmd_oov():
    """Train and apply the out-of-vocabulary detector."""


@cmd_oov.command("train")
@click.argument("lattices", type=click.Path(exists=True, dir_okay=False))
@click.option("--classifier", type=click.Choice(["boosted-trees", "logistic"]),
              default="boosted-trees", show_default=True)
@click.option("--learning-rate", type=float, default=0.05, show_default=True)
@click.option("--estimators", type=int, default=200, show_default=True)
@click.option("--max-depth", type=int, default=4, show_default=True)
@click.option("--min-child-weight", type=float, default=2.0, show_default=True)
@click.option("--subsample", type=float, default=0.8, show_default=True)
@click.option("--colsample", type=float, default=0.8, show_default=True)
@click.option("--gamma", type=float, default=1.0, show_default=True)
@click.option("--reg-alpha", type=float, default=0.1, show_default=True)
@click.option("--reg-lambda", type=float, default=1.0, show_default=True)
@click.option("--l2-penalty", type=float, default=1.0, show_default=True, help="Logistic backend.")
@click.option("--iterations", type=int, default=300, show_default=True, help="Logistic backend.")
@click.option("--step-size", type=float, default=0.5, show_default=True, help="Logistic backend.")
@click.option("--threshold", type=float, default=0.5, show_default=True,
              help="Default flagging threshold stored with the detector.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_oov_train(ctx, **_):
    """Train a detector on lattices carrying ground-truth OOV labels."""
    p = _resolve(ctx)
    _require(p, "out", "--out")
    lattices = load_lattice_file(p["lattices"])
    if not lattices:
        raise LatticeFormatError(f"{p['lattices']} holds no lattices", 1)
    features, labels = lattice_features(lattices)
    hp = DetectorHyperparameters(
        classifier_kind=p["classifier"].replace("-", "_"),
        learning_rate=p["learning_rate"],
        n_estimators=p["estimators"],
        max_depth=p["max_depth"],
        min_child_weight=p["min_child_weight"],
        subsample=p["subsample"],
        colsample=p["colsample"],
        gamma=p["gamma"],
        reg_alpha=p["reg_alpha"],
        reg_lambda=p["reg_lambda"],
        l2_penalty=p["l2_penalty"],
        iterations=p["iterations"],
        step_size=p["step_size"],
        seed=p["seed"],
    )
    detector = train_oov_detector(
        features, labels, len(lattices[0].vocab), hyperparameters=hp, threshold=p["threshold"]
    )
    training_auroc = auroc(detector.probabilities(features), labels)
    out_dir = _prepare_out(p["out"])
    save_detector_file(detector, out_dir / "detector.json")
    _echo_runconfig(out_dir, ctx, p)
    click.echo(
        f"trained {hp.classifier_kind} detector on {features.shape[0]} positions "
        f"({int(labels.sum())} OOV); training AUROC {training_auroc:.4f}; "
        f"wrote {out_dir / 'detector.json'}"
    )


@cmd_oov.command("detect")
@click.argument("lattices", type=click.Path(exists=True, dir_okay=False))
@click.option("--detector", "detector_path", default=None,
              type=click.Path(exists=True, dir_okay=False), help="Trained detector file.")
@click.option("--threshold", type=float, default=None,
              help="Flagging threshold override (defaults to the stored one).")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_oov_detect(ctx, **_):
    """Write detector probabilities into a lattice file's positions."""
    p = _resolve(ctx)
    _require(p, "detector_path", "--detector")
    _require(p, "out", "--out")
    detector = load_detector_file(p["detector_path"])
    lattices = load_lattice_file(p["lattices"])
    if not lattices:
        raise LatticeFormatError(f"{p['lattices']} holds no lattices", 1)
    threshold = detector.threshold if p["threshold"] is None else p["threshold"]
    flagged = [flag_positions(detector, lat, threshold) for lat in lattices]
    n_flagged = sum(
        1
        for lat in flagged
        for pos in lat.positions
        if pos.oov_detected is not None and pos.oov_detected >= threshold
    )
    total = sum(len(lat) for lat in flagged)
    out_dir = _prepare_out(p["out"])
    save_lattice_file(flagged, out_dir / "flagged.jsonl")
    _echo_runconfig(out_dir, ctx, p)
    click.echo(
        f"flagged {n_flagged}/{total} positions at threshold {threshold:g}; "
        f"wrote {out_dir / 'flagged.jsonl'}"
    )


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


@cli.command("eval")
@click.argument("hypotheses", type=click.Path(exists=True, dir_okay=False))
@click.option("--ref", "ref_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Reference transcript file, one sequence per line.")
@click.option("--lattices", "lattices_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Lattice file whose embedded references are used.")
@click.option("--unk-mode", type=click.Choice(["insert", "drop", "random-fill"]),
              default="insert", show_default=True,
              help="Treatment of sentinel words before scoring.")
@click.option("--vocab", "vocab_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Vocabulary file providing the random-fill pool (or use --lattices).")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_eval(ctx, **_):
    """Score a transcript against references on all six metrics."""
    p = _resolve(ctx)
    _require(p, "out", "--out")
    if (p["ref_path"] is None) == (p["lattices_path"] is None):
        raise click.UsageError("exactly one of --ref or --lattices is required")
    hypotheses = _read_transcripts(p["hypotheses"])
    vocab: Vocabulary | None = None
    if p["lattices_path"]:
        lattices = load_lattice_file(p["lattices_path"])
        missing = [i for i, lat in enumerate(lattices) if lat.reference_text is None]
        if missing:
            raise LatticeFormatError(
                f"lattices {missing[:5]} carry no reference text", 1
            )
        references = [list(lat.reference_text) for lat in lattices]
        vocab = lattices[0].vocab if lattices else None
    else:
        references = _read_transcripts(p["ref_path"])
    if p["vocab_path"]:
        vocab = load_vocabulary_file(p["vocab_path"])
    if len(references) != len(hypotheses):
        raise LatticeFormatError(
            f"{len(references)} references but {len(hypotheses)} hypotheses", 1
        )
    mode = {"insert": "insert_unk", "drop": "drop", "random-fill": "random_fill"}[p["unk_mode"]]
    rng = _rng(p["seed"])
    processed = [
        apply_unk_protocol(hyp, [w == UNK_SENTINEL for w in hyp], mode, vocab, rng)
        for hyp in hypotheses
    ]
    report = evaluate(references, processed)
    out_dir = _prepare_out(p["out"])
    _write_text(out_dir / "report.txt", "\n".join(report.report_lines()) + "\n")
    _write_text(
        out_dir / "summary.json",
        json.dumps(report.summary_dict(), indent=2, sort_keys=True) + "\n",
    )
    _echo_runconfig(out_dir, ctx, p)
    click.echo(report.table())
    click.echo(f"wrote {out_dir / 'report.txt'} and {out_dir / 'summary.json'}")


# ---------------------------------------------------------------------------
# pool
# ---------------------------------------------------------------------------


def _render_pool_text(table, delta, r, pvalue, direction, target, k, selected) -> str:
    names = table.datasets
    width = max(12, max(len(n) for n in names) + 2)
    head = " " * width + "".join(f"{n:>{width}}" for n in names)
    lines = ["improvement matrix (joint minus standalone; rows = evaluated dataset)", head]
    for i, name in enumerate(names):
        cells = "".join(f"{delta[i, j]:>{width}.4f}" for j in range(len(names)))
        lines.append(f"{name:<{width}}" + cells)
    lines.append("")
    lines.append("standalone " + " ".join(f"{v:.4f}" for v in table.standalone))
    lines.append("chance     " + " ".join(f"{v:.4f}" for v in table.chance))
    lines.append(f"quality correlation ({direction}): r={r:.4f}, p={pvalue:.4g}")
    if selected is not None:
        lines.append(f"selected partners for {target} (k={k}): {' '.join(selected)}")
    return "\n".join(lines) + "\n"


@cli.command("pool")
@click.argument("table_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--target", default=None, help="Dataset to choose partners for.")
@click.option("-k", "--top", "k", type=int, default=2, show_default=True,
              help="Number of partners to select.")
@click.option("--direction", type=click.Choice(["conferred", "received"]),
              default="conferred", show_default=True,
              help="Correlate standalone accuracy with improvement given or gained.")
@click.option("--out", type=click.Path(file_okay=False), default=None, help="Output directory.")
@click.pass_context
def cmd_pool(ctx, **_):
    """Analyze a pairwise joint-training accuracy table."""
    p = _resolve(ctx)
    _require(p, "out", "--out")
    table = load_table_file(p["table_path"])
    delta = improvement_matrix(table)
    r, pvalue = quality_correlation(table, direction=p["direction"])
    selected = None
    if p["target"] is not None:
        try:
            selected = select_pool(table, p["target"], p["k"])
        except KeyError as exc:
            raise click.UsageError(str(exc))
    payload = {
        "datasets": list(table.datasets),
        "standalone": list(table.standalone),
        "chance": list(table.chance),
        "improvement": [[float(v) for v in row] for row in delta],
        "correlation": {"direction": p["direction"], "r": r, "p": pvalue},
    }
    if selected is not None:
        payload["selected"] = {"target": p["target"], "k": p["k"], "partners": selected}
    text = _render_pool_text(
        table, delta, r, pvalue, p["direction"], p["target"], p["k"], selected
    )
    out_dir = _prepare_out(p["out"])
    _write_text(out_dir / "pooling.txt", text)
    _write_text(out_dir / "pooling.json", json.dumps(payload, indent=2, sort_keys=True) + "\n")
    _echo_runconfig(out_dir, ctx, p)
    click.echo(text, nl=False)


# ---------------------------------------------------------------------------
# Dispatch
# ---------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    """Run the CLI without raising; returns the process exit code."""
    try:
        result = cli.main(
            args=list(argv) if argv is not None else None,
            prog_name="b2t",
            standalone_mode=False,
        )
        return int(result) if isinstance(result, int) else 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except RemoteServiceError as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    except (LatticeFormatError, ResponseParseError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except (ValueError, KeyError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2


def entry() -> None:
    sys.exit(main(None))


if __name__ == "__main__":
    entry()
