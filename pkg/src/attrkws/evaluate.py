"""WER and language-identification evaluation.

Utterances are single keywords, so word error rate reduces to the
misrecognized fraction; keyword comparison is exact match after the same
NFC + lowercase normalization the lexicon applies. Results are grouped by
evaluation split (seen keywords, unseen keywords, unseen languages) and
language, with both sample-weighted and unweighted split averages since a
single "average" is ambiguous when languages differ in size.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from .decoder import DecodeError, LexiconTrie, beam_recognize, build_trie
from .kwsp import MODE_FEATURE, MODE_LOGIT, KwspError, PosteriorMatrix, read_kwsp
from .lexicon import Lexicon, normalize_keyword
from .manifest import ManifestRecord, load_manifest
from .trainer import ModelState, infer_utterance

EVAL_SPLITS = ("ID-IV", "ID-OOV", "UL")
ZERO_SHOT_SPLITS = ("ID-OOV", "UL")


class EvalError(ValueError):
    """Bad evaluation input: length mismatch, unknown split, missing model."""


class DisjointnessError(EvalError):
    """A zero-shot record's keyword appears in the training lexicon."""


def load_eval_manifest(path: str | Path) -> list[ManifestRecord]:
    records = load_manifest(path)
    for rec in records:
        if rec.split not in EVAL_SPLITS:
            raise EvalError(
                f"{rec.utt_id}: split {rec.split!r} not one of {EVAL_SPLITS}")
    return records


def compute_wer(predictions: Sequence[str], references: Sequence[str]) -> float:
    """Percentage of single-keyword utterances recognized incorrectly."""
    if len(predictions) != len(references):
        raise EvalError(
            f"{len(predictions)} predictions vs {len(references)} references")
    if not references:
        raise EvalError("empty input")
    wrong = sum(
        1 for p, r in zip(predictions, references)
        if normalize_keyword(p) != normalize_keyword(r)
    )
    return 100.0 * wrong / len(references)


def lid_accuracy(predicted: Sequence[str], reference: Sequence[str]) -> float:
    """Percentage of utterances whose language was identified correctly."""
    if len(predicted) != len(reference):
        raise EvalError(f"{len(predicted)} predictions vs {len(reference)} references")
    if not reference:
        raise EvalError("empty input")
    correct = sum(1 for p, r in zip(predicted, reference) if p == r)
    return 100.0 * correct / len(reference)


@dataclass(frozen=True)
class LanguageCell:
    split: str
    language: str
    count: int
    errors: int
    wer: float


@dataclass(frozen=True)
class SplitSummary:
    split: str
    count: int
    errors: int
    wer_weighted: float
    wer_unweighted: float
    lid_accuracy: float | None = None


@dataclass(frozen=True)
class EvalReport:
    cells: tuple[LanguageCell, ...]
    splits: tuple[SplitSummary, ...]
    failures: tuple[tuple[str, str], ...] = ()

    def to_json(self) -> str:
        payload = {
            "cells": [asdict(c) for c in self.cells],
            "splits": [asdict(s) for s in self.splits],
            "failures": [{"utt_id": u, "error": e} for u, e in self.failures],
        }
        return json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        payload = json.loads(text)
        return cls(
            cells=tuple(LanguageCell(**c) for c in payload["cells"]),
            splits=tuple(SplitSummary(**s) for s in payload["splits"]),
            failures=tuple((f["utt_id"], f["error"]) for f in payload["failures"]),
        )

    def render_table(self) -> str:
        """Aligned text table: one block per split, one column per language."""
        lines = []
        for summary in self.splits:
            cells = [c for c in self.cells if c.split == summary.split]
            langs = [c.language for c in cells]
            header = ["          "] + [f"{lang:>8}" for lang in langs]
            header += ["|", f"{'Avg(w)':>8}", f"{'Avg(u)':>8}"]
            lines.append(f"=== {summary.split} ===")
            lines.append(" ".join(header))
            wer_row = ["WER (%)   "] + [f"{c.wer:8.2f}" for c in cells]
            wer_row += ["|", f"{summary.wer_weighted:8.2f}", f"{summary.wer_unweighted:8.2f}"]
            lines.append(" ".join(wer_row))
            count_row = ["samples   "] + [f"{c.count:8d}" for c in cells]
            count_row += ["|", f"{summary.count:8d}", f"{'':8}"]
            lines.append(" ".join(count_row))
            if summary.lid_accuracy is not None:
                lines.append(f"LID accuracy (%): {summary.lid_accuracy:.2f}")
            lines.append("")
        if self.failures:
            lines.append(f"failures: {len(self.failures)}")
            for utt_id, error in self.failures:
                lines.append(f"  {utt_id}: {error}")
            lines.append("")
        return "\n".join(lines)


def check_zero_shot_disjoint(
    records: Sequence[ManifestRecord], training_lexicon: Lexicon
) -> None:
    """Zero-shot contract: ID-OOV and UL keywords must be absent from training."""
    for rec in records:
        if rec.split in ZERO_SHOT_SPLITS and (rec.keyword, rec.language) in training_lexicon:
            raise DisjointnessError(
                f"{rec.utt_id}: zero-shot record ({rec.keyword!r}, {rec.language!r}) "
                f"appears in the training lexicon")


def _decode_record(
    rec: ManifestRecord,
    trie: LexiconTrie,
    beam_width: int | None,
    model: ModelState | None,
) -> tuple[str, str | None, str | None]:
    """Returns (predicted keyword, predicted language or None, error or None)."""
    try:
        mode, values = read_kwsp(rec.path)
        predicted_language = None
        if mode == MODE_FEATURE:
            if model is None:
                raise EvalError(
                    f"{rec.utt_id}: feature input requires a model for posteriors")
            post, cls_logits = infer_utterance(model, values)
            if model.languages:
                predicted_language = model.languages[int(cls_logits.argmax())]
        else:
            post = PosteriorMatrix(values, is_logit=(mode == MODE_LOGIT))
        result = beam_recognize(post, trie, beam_width)
        return result.keyword, predicted_language, None
    except (OSError, KwspError, DecodeError, EvalError) as err:
        return "", None, str(err)


def run_eval(
    records: Sequence[ManifestRecord],
    lexicon: Lexicon,
    beam_width: int | None = 16,
    workers: int = 1,
    model: ModelState | None = None,
    training_lexicon: Lexicon | None = None,
) -> EvalReport:
    """Decode every record and aggregate WER per (split, language).

    Records pointing at feature files are run through ``model`` to get
    posteriors (and language predictions for LID accuracy); posterior
    files decode directly. Per-record failures are collected and the rest
    of the run continues. Supplying ``training_lexicon`` asserts the
    zero-shot disjointness contract up front.
    """
    if not records:
        raise EvalError("empty manifest")
    for rec in records:
        if rec.split not in EVAL_SPLITS:
            raise EvalError(f"{rec.utt_id}: split {rec.split!r} not one of {EVAL_SPLITS}")
    if training_lexicon is not None:
        check_zero_shot_disjoint(records, training_lexicon)
    trie = build_trie(lexicon)

    if workers == 1:
        outcomes = [_decode_record(r, trie, beam_width, model) for r in records]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(
                lambda r: _decode_record(r, trie, beam_width, model), records))

    failures: list[tuple[str, str]] = []
    grouped: dict[tuple[str, str], list[tuple[str, str, str | None]]] = {}
    for rec, (keyword, lang_pred, error) in zip(records, outcomes):
        if error is not None:
            failures.append((rec.utt_id, error))
            continue
        grouped.setdefault((rec.split, rec.language), []).append(
            (keyword, rec.keyword, lang_pred))

    cells: list[LanguageCell] = []
    summaries: list[SplitSummary] = []
    for split in EVAL_SPLITS:
        split_keys = sorted(k for k in grouped if k[0] == split)
        if not split_keys:
            continue
        split_cells = []
        lid_pred: list[str] = []
        lid_ref: list[str] = []
        for key in split_keys:
            rows = grouped[key]
            errors = sum(
                1 for pred, ref, _ in rows
                if normalize_keyword(pred) != normalize_keyword(ref))
            split_cells.append(LanguageCell(
                split=split, language=key[1], count=len(rows), errors=errors,
                wer=100.0 * errors / len(rows)))
            for _, _, lang_pred in rows:
                if lang_pred is not None:
                    lid_pred.append(lang_pred)
                    lid_ref.append(key[1])
        count = sum(c.count for c in split_cells)
        errors = sum(c.errors for c in split_cells)
        summaries.append(SplitSummary(
            split=split,
            count=count,
            errors=errors,
            wer_weighted=100.0 * errors / count,
            wer_unweighted=sum(c.wer for c in split_cells) / len(split_cells),
            lid_accuracy=lid_accuracy(lid_pred, lid_ref) if lid_pred else None,
        ))
        cells.extend(split_cells)
    if not cells:
        raise EvalError("every record failed to decode; no report to build")
    return EvalReport(tuple(cells), tuple(summaries), tuple(failures))
