"""Command-line scripts: feature extraction and phonemizer conversion."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .extract import (ExtractionJob, ModelLoadError, extract, load_metadata,
                      write_manifest)
from .phonemizer_convert import ConversionError, convert_phonemizer_output


def _cmd_extract(args: argparse.Namespace) -> int:
    metadata = load_metadata(args.metadata) if args.metadata else {}
    job = ExtractionJob(
        audio_paths=tuple(args.audio),
        model=args.model,
        out_dir=args.out_dir,
        layer=args.layer,
        frame_stride=args.frame_stride,
        output_mode="probs" if args.probs else "features",
        metadata=metadata,
    )
    written, rows = extract(job)
    if args.manifest_out:
        write_manifest(args.manifest_out, rows)
    print(f"wrote {len(written)} of {len(args.audio)} files to {args.out_dir}",
          file=sys.stderr)
    return 0


def _cmd_convert(args: argparse.Namespace) -> int:
    keywords = [l for l in Path(args.keywords).read_text("utf-8").splitlines() if l.strip()]
    lines = Path(args.phonemes).read_text("utf-8").splitlines()
    tsv = convert_phonemizer_output(lines, keywords, args.language)
    if args.out:
        Path(args.out).write_text(tsv, "utf-8")
    else:
        sys.stdout.write(tsv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feature-bridge")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("extract", help="audio -> KWSP feature/posterior files")
    p.add_argument("audio", nargs="+", help="wav files")
    p.add_argument("--model", default="base-untrained",
                   help="checkpoint path/name, or 'base-untrained'")
    p.add_argument("--out-dir", default="features")
    p.add_argument("--layer", type=int, default=-1,
                   help="transformer layer to export (default: final)")
    p.add_argument("--frame-stride", type=int, default=1)
    p.add_argument("--probs", action="store_true",
                   help="write softmaxed posteriors (requires a CTC-headed checkpoint)")
    p.add_argument("--metadata", help="utt_id<TAB>keyword<TAB>language[<TAB>split] sidecar")
    p.add_argument("--manifest-out", help="write JSON-lines manifest rows here")
    p.set_defaults(func=_cmd_extract)

    p = subs.add_parser("convert-phonemizer", help="phonemizer output -> keyword TSV")
    p.add_argument("--keywords", required=True, help="one keyword per line")
    p.add_argument("--phonemes", required=True, help="phonemizer output, one line per keyword")
    p.add_argument("--language", required=True, help="ISO-639-1 code for all rows")
    p.add_argument("--out", help="output TSV (default: stdout)")
    p.set_defaults(func=_cmd_convert)
    return parser


def main() -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO)
    args = build_parser().parse_args()
    try:
        sys.exit(args.func(args))
    except (ValueError, OSError, ConversionError, ModelLoadError) as err:
        print(f"feature-bridge: error: {err}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
