import numpy as np
import pytest

from attrkws.evaluate import (
    DisjointnessError,
    EvalError,
    EvalReport,
    compute_wer,
    lid_accuracy,
    load_eval_manifest,
    run_eval,
)
from attrkws.kwsp import write_posteriors
from attrkws.lexicon import LexiconRow, build_lexicon
from attrkws.manifest import ManifestRecord, write_manifest

from generators import aligned_posteriors


def test_wer_definition():
    preds = ["a"] * 7 + ["x"] * 3
    refs = ["a"] * 10
    assert compute_wer(preds, refs) == 30.0
    assert compute_wer(refs, refs) == 0.0
    assert compute_wer(["x"] * 10, refs) == 100.0


def test_wer_normalizes_before_compare():
    assert compute_wer(["Über"], ["über".replace("ü", "Ü")]) == 0.0
    assert compute_wer(["über"], ["uber"]) == 100.0


def test_wer_input_validation():
    with pytest.raises(EvalError, match="predictions vs"):
        compute_wer(["a"], ["a", "b"])
    with pytest.raises(EvalError, match="empty"):
        compute_wer([], [])


def test_wer_permutation_invariant(rng):
    preds = ["a", "b", "c", "a", "b"]
    refs = ["a", "x", "c", "y", "b"]
    base = compute_wer(preds, refs)
    order = rng.permutation(len(preds))
    assert compute_wer([preds[i] for i in order], [refs[i] for i in order]) == base


def test_lid_accuracy():
    assert lid_accuracy(["aa", "bb"], ["aa", "bb"]) == 100.0
    assert lid_accuracy(["aa", "aa"], ["aa", "bb"]) == 50.0
    with pytest.raises(EvalError):
        lid_accuracy(["aa"], [])


def test_lid_accuracy_chance_level_eight_classes(rng):
    classes = [f"l{i}" for i in range(8)]
    refs = classes * 500
    preds = [classes[i] for i in rng.integers(0, 8, size=len(refs))]
    assert lid_accuracy(preds, refs) == pytest.approx(12.5, abs=3.0)


def _eval_setup(tmp_path, rng, split_languages):
    """Posterior files spelling the reference keyword with known error injections."""
    rows = [LexiconRow(f"kw{k}", lang, (f"u{k}", f"u{(k + 1) % 4}"))
            for k in range(4) for lang in {lang for _, lang in split_languages}]
    lex = build_lexicon(rows, "phoneme")
    records = []
    serial = 0
    for split, lang in split_languages:
        keyword = f"kw{serial % 4}"
        labels = lex.lookup(keyword, lang)
        post = aligned_posteriors(rng, labels, 16, len(lex.vocab), sharpness=200.0)
        path = tmp_path / f"utt{serial:03d}.kwsp"
        write_posteriors(path, post)
        records.append(ManifestRecord(f"utt{serial:03d}", str(path), keyword, lang, split))
        serial += 1
    return lex, records


def test_run_eval_all_correct_single_split(tmp_path, rng):
    lex, records = _eval_setup(tmp_path, rng, [("UL", "tt")] * 8)
    report = run_eval(records, lex, beam_width=None)
    assert len(report.splits) == 1
    summary = report.splits[0]
    assert summary.split == "UL"
    assert summary.wer_weighted == 0.0
    assert summary.lid_accuracy is None


def test_run_eval_split_averages_weighted_and_unweighted(tmp_path, rng):
    # two languages, 5 utterances each; corrupt one language's references
    pairs = [("ID-IV", "aa")] * 5 + [("ID-IV", "bb")] * 5
    lex, records = _eval_setup(tmp_path, rng, pairs)
    # force errors: point two aa references at the wrong keyword
    records = [
        ManifestRecord(r.utt_id, r.path, "kw3" if i in (0, 1) else r.keyword,
                       r.language, r.split)
        for i, r in enumerate(records)
    ]
    report = run_eval(records, lex, beam_width=None)
    cells = {c.language: c for c in report.cells}
    assert cells["aa"].count == 5 and cells["bb"].count == 5
    assert cells["aa"].errors == 2 and cells["bb"].errors == 0
    summary = report.splits[0]
    assert summary.wer_weighted == pytest.approx(100.0 * 2 / 10)
    assert summary.wer_unweighted == pytest.approx((40.0 + 0.0) / 2)


def test_equal_counts_make_weighted_equal_unweighted(tmp_path, rng):
    pairs = [("ID-IV", "aa")] * 4 + [("ID-IV", "bb")] * 4
    lex, records = _eval_setup(tmp_path, rng, pairs)
    records = [
        ManifestRecord(r.utt_id, r.path, "kw3" if i in (0, 4) else r.keyword,
                       r.language, r.split)
        for i, r in enumerate(records)
    ]
    report = run_eval(records, lex, beam_width=None)
    summary = report.splits[0]
    assert summary.wer_weighted == pytest.approx(summary.wer_unweighted)


def test_split_average_recomputable_from_cells(tmp_path, rng):
    pairs = [("ID-OOV", "aa")] * 3 + [("ID-OOV", "bb")] * 6
    lex, records = _eval_setup(tmp_path, rng, pairs)
    report = run_eval(records, lex, beam_width=None)
    summary = report.splits[0]
    cells = [c for c in report.cells if c.split == "ID-OOV"]
    weighted = sum(c.wer * c.count for c in cells) / sum(c.count for c in cells)
    assert summary.wer_weighted == pytest.approx(weighted)


def test_disjointness_violation(tmp_path, rng):
    lex, records = _eval_setup(tmp_path, rng, [("ID-OOV", "aa")] * 2)
    training_lexicon = build_lexicon(
        [LexiconRow(records[0].keyword, "aa", ("u0", "u1"))], "phoneme")
    with pytest.raises(DisjointnessError):
        run_eval(records, lex, beam_width=None, training_lexicon=training_lexicon)
    clean = build_lexicon([LexiconRow("other", "aa", ("u0",))], "phoneme")
    run_eval(records, lex, beam_width=None, training_lexicon=clean)


def test_bad_split_rejected(tmp_path, rng):
    lex, records = _eval_setup(tmp_path, rng, [("ID-IV", "aa")])
    bad = [ManifestRecord(r.utt_id, r.path, r.keyword, r.language, "TRAIN")
           for r in records]
    with pytest.raises(EvalError, match="split"):
        run_eval(bad, lex)


def test_missing_files_collected_not_fatal(tmp_path, rng):
    lex, records = _eval_setup(tmp_path, rng, [("UL", "aa")] * 3)
    records[1] = ManifestRecord("gone", str(tmp_path / "missing.kwsp"),
                                records[1].keyword, "aa", "UL")
    report = run_eval(records, lex, beam_width=None)
    assert len(report.failures) == 1
    assert report.failures[0][0] == "gone"
    assert report.splits[0].count == 2


def test_report_json_round_trip(tmp_path, rng):
    lex, records = _eval_setup(
        tmp_path, rng, [("ID-IV", "aa")] * 3 + [("UL", "bb")] * 3)
    report = run_eval(records, lex, beam_width=None)
    again = EvalReport.from_json(report.to_json())
    assert again == report
    assert "ID-IV" in report.render_table()


def test_record_order_does_not_change_report(tmp_path, rng):
    lex, records = _eval_setup(tmp_path, rng, [("ID-IV", "aa")] * 4 + [("ID-IV", "bb")] * 4)
    report_a = run_eval(records, lex, beam_width=None)
    report_b = run_eval(list(reversed(records)), lex, beam_width=None)
    assert report_a.cells == report_b.cells
    assert report_a.splits == report_b.splits


def test_load_eval_manifest_validates_split(tmp_path):
    records = [ManifestRecord("u1", "x.kwsp", "kw", "aa", "ID-IV"),
               ManifestRecord("u2", "y.kwsp", "kw", "aa", "nope")]
    path = tmp_path / "m.jsonl"
    write_manifest(path, records)
    with pytest.raises(EvalError, match="split"):
        load_eval_manifest(path)
