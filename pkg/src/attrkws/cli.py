"""Single command-line entry point.

Subcommands cover the whole pipeline: phoneme-to-attribute mapping,
lexicon building, synthetic data generation, training, posterior export,
decoding, and evaluation. Every flag has a config-file equivalent (TOML,
``[subcommand]`` tables; flags win over the file). Structured logs go to
stderr (verbosity via ``ATTRKWS_LOG``); data goes to stdout or the
``--out`` path only. Exit codes: 0 success, 1 user error, 2 internal
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from dataclasses import fields as dataclass_fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .attributes import default_inventory, load_phoneme_table, phonemes_to_attributes
from .decoder import batch_recognize, build_trie, results_to_jsonl
from .evaluate import load_eval_manifest, run_eval
from .kwsp import read_features
from .lexicon import build_lexicon, load_keyword_table, parse_lexicon, write_lexicon
from .manifest import load_manifest
from .synth import SynthSpec, generate
from .trainer import (EpochStats, ModelConfig, export_posteriors, load_state,
                      save_state, train)

EXIT_OK = 0
EXIT_USER = 1
EXIT_INTERNAL = 2

log = logging.getLogger("attrkws")

_USER_ERRORS = (ValueError, LookupError, OSError)


class _Parser(argparse.ArgumentParser):
    """argparse variant honoring the exit-code contract (user errors -> 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def _setup_logging() -> None:
    level = os.environ.get("ATTRKWS_LOG", "WARNING").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
        level = "WARNING"
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(path: str | None, section: str) -> dict:
    """Flat defaults from a TOML file: top-level keys plus the
    ``[section]`` table; the table wins."""
    if path is None:
        return {}
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(section, {}))
    return merged


def _resolve(args: argparse.Namespace, config: dict, key: str, default=None):
    """Precedence: explicit CLI flag > config file > built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _inventory(table_path: str | None):
    if table_path is None:
        return default_inventory()
    return load_phoneme_table(Path(table_path).read_text("utf-8"))


def _write_or_stdout(out: str | None, text: str) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, "utf-8")


# --- subcommand implementations -----------------------------------------


def _cmd_map_attributes(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "map-attributes")
    inv = _inventory(_resolve(args, config, "phoneme_table"))
    source = _resolve(args, config, "input")
    text = sys.stdin.read() if source in (None, "-") else Path(source).read_text("utf-8")
    out_lines = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            tokens = phonemes_to_attributes(inv, line.split())
        except LookupError as err:
            raise ValueError(f"line {lineno}: {err}") from None
        out_lines.append(" ".join(t.canonical for t in tokens))
    _write_or_stdout(_resolve(args, config, "out"), "\n".join(out_lines) + "\n")
    return EXIT_OK


def _cmd_build_lexicon(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "build-lexicon")
    units = _resolve(args, config, "units")
    if units is None:
        raise ValueError("--units is required (character | phoneme | attribute)")
    rows = load_keyword_table(Path(_require(args, config, "input")).read_text("utf-8"))
    inv = None
    if units == "attribute":
        inv = _inventory(_resolve(args, config, "phoneme_table"))
    lenient = bool(_resolve(args, config, "lenient", False))
    lexicon = build_lexicon(rows, units, inv, lenient=lenient)
    if lexicon.dropped:
        log.warning("dropped %d rows during lenient build", lexicon.dropped)
    Path(_require(args, config, "output")).write_text(write_lexicon(lexicon), "utf-8")
    log.info("wrote lexicon: %d entries, %d tokens", len(lexicon.entries), len(lexicon.vocab))
    return EXIT_OK


def _require(args: argparse.Namespace, config: dict, key: str):
    value = _resolve(args, config, key)
    if value is None:
        raise ValueError(f"--{key.replace('_', '-')} is required")
    return value


_TRAIN_FIELDS = [f.name for f in dataclass_fields(ModelConfig)]


def _cmd_train(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "train")
    lexicon = parse_lexicon(Path(_require(args, config, "lexicon")).read_text("utf-8"))
    train_records = load_manifest(_require(args, config, "train_manifest"))
    val_records = load_manifest(_require(args, config, "val_manifest"))
    languages = sorted({r.language for r in train_records})

    overrides = {}
    for name in _TRAIN_FIELDS:
        value = _resolve(args, config, name)
        if value is not None:
            overrides[name] = value
    overrides.setdefault("vocab_size", len(lexicon.vocab))
    overrides.setdefault("num_languages", len(languages))
    if "feature_dim" not in overrides:
        overrides["feature_dim"] = int(read_features(train_records[0].path).shape[1])
    model_config = ModelConfig(**overrides)

    def progress(stats: EpochStats) -> None:
        log.info("epoch %d: train ctc %.4f cls %.4f | val ctc %.4f cls %.4f",
                 stats.epoch, stats.train_loss_ctc, stats.train_loss_cls,
                 stats.val_loss_ctc, stats.val_loss_cls)

    state, curves = train(model_config, train_records, val_records, lexicon, progress)
    save_state(_require(args, config, "model_out"), state)
    curves_out = _resolve(args, config, "curves_out")
    if curves_out is not None:
        payload = [
            {"epoch": s.epoch, "train_loss_ctc": s.train_loss_ctc,
             "train_loss_cls": s.train_loss_cls, "val_loss_ctc": s.val_loss_ctc,
             "val_loss_cls": s.val_loss_cls}
            for s in curves
        ]
        Path(curves_out).write_text(json.dumps(payload, indent=2) + "\n", "utf-8")
    log.info("trained %d epochs; best val ctc %.4f", len(curves),
             min(s.val_loss_ctc for s in curves))
    return EXIT_OK


def _cmd_export_posteriors(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "export-posteriors")
    state = load_state(_require(args, config, "model"))
    records = load_manifest(_require(args, config, "manifest"))
    written = export_posteriors(state, records, _require(args, config, "out_dir"))
    log.info("wrote %d posterior files", len(written))
    return EXIT_OK


def _beam_width(value: int) -> int | None:
    # beam 0 means unpruned (exhaustive-equivalent) search
    return None if value == 0 else value


def _cmd_decode(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "decode")
    lexicon = parse_lexicon(Path(_require(args, config, "lexicon")).read_text("utf-8"))
    trie = build_trie(lexicon)
    source = Path(_require(args, config, "posteriors"))
    if source.is_dir():
        paths = sorted(source.glob("*.kwsp"))
        if not paths:
            raise ValueError(f"no .kwsp files in {source}")
    else:
        paths = [source]
    beam = _beam_width(int(_resolve(args, config, "beam", 16)))
    workers = int(_resolve(args, config, "workers", os.cpu_count() or 1))
    items = batch_recognize(paths, trie, beam, workers=workers)
    _write_or_stdout(_resolve(args, config, "out"), results_to_jsonl(items))
    failed = sum(1 for it in items if it.error is not None)
    log.info("decoded %d files (%d failures)", len(items), failed)
    return EXIT_OK if failed < len(items) or not items else EXIT_USER


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "evaluate")
    records = load_eval_manifest(_require(args, config, "manifest"))
    lexicon = parse_lexicon(Path(_require(args, config, "lexicon")).read_text("utf-8"))
    model = None
    model_path = _resolve(args, config, "model")
    if model_path is not None:
        model = load_state(model_path)
    training_lexicon = None
    train_lex_path = _resolve(args, config, "train_lexicon")
    if train_lex_path is not None:
        training_lexicon = parse_lexicon(Path(train_lex_path).read_text("utf-8"))
    beam = _beam_width(int(_resolve(args, config, "beam", 16)))
    workers = int(_resolve(args, config, "workers", os.cpu_count() or 1))
    report = run_eval(records, lexicon, beam_width=beam, workers=workers,
                      model=model, training_lexicon=training_lexicon)
    _write_or_stdout(_resolve(args, config, "report_out"), report.to_json())
    table_out = _resolve(args, config, "table_out")
    if table_out is not None:
        Path(table_out).write_text(report.render_table(), "utf-8")
    elif bool(_resolve(args, config, "table", False)):
        sys.stdout.write(report.render_table())
    return EXIT_OK


_SYNTH_FIELDS = [f.name for f in dataclass_fields(SynthSpec)]


def _cmd_synth_data(args: argparse.Namespace) -> int:
    config = _load_config(args.config, "synth-data")
    overrides = {}
    for name in _SYNTH_FIELDS:
        value = _resolve(args, config, name)
        if value is not None:
            overrides[name] = value
    if "languages" in overrides and isinstance(overrides["languages"], str):
        overrides["languages"] = tuple(overrides["languages"].split(","))
    spec = SynthSpec(**overrides)
    paths = generate(spec, _require(args, config, "out_dir"))
    for name, path in sorted(paths.items()):
        log.info("%s: %s", name, path)
    return EXIT_OK


# --- argument wiring -----------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="TOML config file; flags override it")


def build_parser() -> _Parser:
    parser = _Parser(prog="attrkws", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"attrkws {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="SUBCOMMAND")

    p = subs.add_parser("map-attributes", parents=[], help="map phoneme sequences to attribute tokens")
    _add_common(p)
    p.add_argument("--phoneme-table", dest="phoneme_table", help="TSV table (default: shipped)")
    p.add_argument("--input", help="file with one space-separated phoneme sequence per line; '-' for stdin")
    p.add_argument("--out", help="output path (default: stdout)")
    p.set_defaults(func=_cmd_map_attributes)

    p = subs.add_parser("build-lexicon", help="build and serialize a pronunciation lexicon")
    _add_common(p)
    p.add_argument("--units", choices=("character", "phoneme", "attribute"))
    p.add_argument("--input", help="keyword TSV: keyword<TAB>language[<TAB>phonemes]")
    p.add_argument("--phoneme-table", dest="phoneme_table")
    p.add_argument("--lenient", action="store_const", const=True, default=None,
                   help="drop unmappable rows instead of failing")
    p.add_argument("--output", help="serialized lexicon path")
    p.set_defaults(func=_cmd_build_lexicon)

    p = subs.add_parser("train", help="train the adversarial keyword model")
    _add_common(p)
    p.add_argument("--train-manifest", dest="train_manifest")
    p.add_argument("--val-manifest", dest="val_manifest")
    p.add_argument("--lexicon")
    p.add_argument("--model-out", dest="model_out")
    p.add_argument("--curves-out", dest="curves_out")
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--num-languages", dest="num_languages", type=int)
    p.add_argument("--context", type=int)
    p.add_argument("--encoder-layers", dest="encoder_layers", type=int)
    p.add_argument("--encoder-width", dest="encoder_width", type=int)
    p.add_argument("--classifier-layers", dest="classifier_layers", type=int)
    p.add_argument("--classifier-width", dest="classifier_width", type=int)
    p.add_argument("--lambda", dest="grl_lambda", type=float,
                   help="reversal scale for the classifier gradient")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--optimizer", choices=("sgd", "adamw"))
    p.add_argument("--beta1", type=float)
    p.add_argument("--beta2", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_train)

    p = subs.add_parser("export-posteriors", help="write per-utterance posterior files")
    _add_common(p)
    p.add_argument("--model")
    p.add_argument("--manifest")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=_cmd_export_posteriors)

    p = subs.add_parser("decode", help="decode posterior files against a lexicon")
    _add_common(p)
    p.add_argument("--lexicon")
    p.add_argument("--posteriors", help="posterior file or directory of .kwsp files")
    p.add_argument("--beam", type=int, help="beam width (0 = unpruned)")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="results JSONL path (default: stdout)")
    p.set_defaults(func=_cmd_decode)

    p = subs.add_parser("evaluate", help="compute WER/LID report over an eval manifest")
    _add_common(p)
    p.add_argument("--manifest")
    p.add_argument("--lexicon")
    p.add_argument("--model", help="trained state for feature inputs / LID")
    p.add_argument("--train-lexicon", dest="train_lexicon",
                   help="training lexicon for the zero-shot disjointness check")
    p.add_argument("--beam", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--report-out", dest="report_out", help="JSON report path (default: stdout)")
    p.add_argument("--table", action="store_const", const=True, default=None,
                   help="also print the aligned text table")
    p.add_argument("--table-out", dest="table_out", help="write the text table here")
    p.set_defaults(func=_cmd_evaluate)

    p = subs.add_parser("synth-data", help="generate the synthetic adversarial dataset")
    _add_common(p)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--languages", help="comma-separated language codes")
    p.add_argument("--n-keywords", dest="n_keywords", type=int)
    p.add_argument("--n-units", dest="n_units", type=int)
    p.add_argument("--feature-dim", dest="feature_dim", type=int)
    p.add_argument("--train-per-keyword", dest="train_per_keyword", type=int)
    p.add_argument("--val-per-keyword", dest="val_per_keyword", type=int)
    p.add_argument("--test-per-keyword", dest="test_per_keyword", type=int)
    p.add_argument("--content-scale", dest="content_scale", type=float)
    p.add_argument("--language-offset-scale", dest="language_offset_scale", type=float)
    p.add_argument("--utterance-shift-scale", dest="utterance_shift_scale", type=float)
    p.add_argument("--noise-scale", dest="noise_scale", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=_cmd_synth_data)

    return parser


def run(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "func", None) is None:
        parser.print_usage(sys.stderr)
        return EXIT_USER
    try:
        return args.func(args)
    except _USER_ERRORS as err:
        print(f"attrkws: error: {err}", file=sys.stderr)
        return EXIT_USER
    except SystemExit:
        raise
    except BaseException:
        traceback.print_exc()
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
