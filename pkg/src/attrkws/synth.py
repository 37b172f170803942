"""Synthetic multi-language keyword dataset.

Generates feature files whose frames carry three signals: a per-token
content embedding shared by every language, a constant per-language
offset, and a per-utterance random shift standing in for speaker/channel
variability. A model can recognize keywords without language information,
and a language classifier succeeds easily as long as the offset survives
in the features; once adversarial training shrinks the offset below the
utterance-level variability, language identity becomes unrecoverable.
Everything is seeded, so the same spec always produces byte-identical
files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kwsp import write_features
from .lexicon import LexiconRow, build_lexicon, write_lexicon
from .manifest import ManifestRecord, write_manifest


@dataclass(frozen=True)
class SynthSpec:
    languages: tuple[str, ...] = ("aa", "bb")
    n_keywords: int = 8
    n_units: int = 6
    feature_dim: int = 16
    train_per_keyword: int = 12
    val_per_keyword: int = 3
    test_per_keyword: int = 12
    min_token_frames: int = 2
    max_token_frames: int = 4
    max_silence_frames: int = 2
    content_scale: float = 1.0
    language_offset_scale: float = 0.6
    utterance_shift_scale: float = 0.3
    noise_scale: float = 0.35
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.languages) < 2:
            raise ValueError("need at least 2 languages")
        if self.n_keywords < 2 or self.n_units < 2:
            raise ValueError("need at least 2 keywords over at least 2 units")


def _keyword_pronunciations(spec: SynthSpec, rng: np.random.Generator) -> dict[str, tuple[str, ...]]:
    """Distinct unit sequences of length 2..4 per keyword."""
    units = [f"u{i}" for i in range(spec.n_units)]
    prons: dict[str, tuple[str, ...]] = {}
    taken: set[tuple[str, ...]] = set()
    for k in range(spec.n_keywords):
        while True:
            length = int(rng.integers(2, 5))
            pron = tuple(units[int(i)] for i in rng.integers(0, spec.n_units, size=length))
            if pron not in taken:
                taken.add(pron)
                prons[f"kw{k:02d}"] = pron
                break
    return prons


def generate(spec: SynthSpec, out_dir: str | Path) -> dict[str, Path]:
    """Write feature files, keyword table, and train/val/eval manifests.

    Returns the paths keyed by artifact name (``keywords``, ``train``,
    ``val``, ``eval``). The eval manifest is tagged ID-IV: every keyword
    and language also occurs in training.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    feat_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)

    prons = _keyword_pronunciations(spec, rng)
    unit_names = sorted({u for p in prons.values() for u in p})
    # one embedding per unit plus one for inter-token silence
    content = {u: rng.normal(0.0, spec.content_scale, size=spec.feature_dim)
               for u in unit_names}
    silence = rng.normal(0.0, spec.content_scale, size=spec.feature_dim)
    offsets = {lang: rng.normal(0.0, spec.language_offset_scale, size=spec.feature_dim)
               for lang in spec.languages}

    rows = [LexiconRow(kw, lang, pron)
            for lang in spec.languages for kw, pron in sorted(prons.items())]
    lexicon = build_lexicon(rows, "phoneme")
    keywords_path = out_dir / "keywords.tsv"
    keyword_lines = [f"{r.keyword}\t{r.language}\t{' '.join(r.phonemes)}" for r in rows]
    keywords_path.write_text("\n".join(keyword_lines) + "\n", "utf-8")
    (out_dir / "lexicon.tsv").write_text(write_lexicon(lexicon), "utf-8")

    counts = {"train": spec.train_per_keyword, "val": spec.val_per_keyword,
              "eval": spec.test_per_keyword}
    manifests: dict[str, list[ManifestRecord]] = {k: [] for k in counts}
    serial = 0
    for lang in spec.languages:
        for kw, pron in sorted(prons.items()):
            for split, per in counts.items():
                for _ in range(per):
                    frames = []
                    pad = int(rng.integers(0, spec.max_silence_frames + 1))
                    frames.extend([silence] * pad)
                    for unit in pron:
                        dur = int(rng.integers(spec.min_token_frames,
                                               spec.max_token_frames + 1))
                        frames.extend([content[unit]] * dur)
                    pad = int(rng.integers(0, spec.max_silence_frames + 1))
                    frames.extend([silence] * pad)
                    shift = rng.normal(0.0, spec.utterance_shift_scale,
                                       size=spec.feature_dim)
                    feats = (np.stack(frames) + offsets[lang] + shift
                             + rng.normal(0.0, spec.noise_scale,
                                          size=(len(frames), spec.feature_dim)))
                    utt_id = f"utt{serial:05d}"
                    serial += 1
                    write_features(feat_dir / f"{utt_id}.kwsp", feats.astype(np.float32))
                    manifests[split].append(ManifestRecord(
                        utt_id=utt_id,
                        # relative to the manifests, which live in out_dir:
                        # the dataset directory stays relocatable
                        path=f"features/{utt_id}.kwsp",
                        keyword=kw,
                        language=lang,
                        split="ID-IV" if split == "eval" else split,
                    ))

    paths = {"keywords": keywords_path}
    for split, records in manifests.items():
        path = out_dir / f"manifest_{split}.jsonl"
        write_manifest(path, records)
        paths[split] = path
    return paths
