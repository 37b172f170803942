"""JSON-lines utterance manifests shared by training, decoding, and evaluation."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence


class ManifestError(ValueError):
    """Malformed manifest line or missing field."""


@dataclass(frozen=True)
class ManifestRecord:
    utt_id: str
    path: str
    keyword: str
    language: str
    split: str


_FIELDS = ("utt_id", "path", "keyword", "language", "split")


def load_manifest(path: str | Path) -> list[ManifestRecord]:
    """Read manifest JSONL; relative ``path`` fields resolve against the
    manifest's own directory."""
    base = Path(path).parent
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise ManifestError(f"{path}: line {lineno}: {err}") from None
        missing = [f for f in _FIELDS if f not in obj]
        if missing:
            raise ManifestError(f"{path}: line {lineno}: missing fields {missing}")
        utt_id = str(obj["utt_id"])
        if utt_id in seen:
            raise ManifestError(f"{path}: line {lineno}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        rec_path = Path(str(obj["path"]))
        if not rec_path.is_absolute():
            rec_path = base / rec_path
        records.append(ManifestRecord(
            utt_id=utt_id,
            path=str(rec_path),
            keyword=str(obj["keyword"]),
            language=str(obj["language"]),
            split=str(obj["split"]),
        ))
    return records


def write_manifest(path: str | Path, records: Sequence[ManifestRecord]) -> None:
    lines = [json.dumps(asdict(r), ensure_ascii=False) for r in records]
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")


def filter_split(records: Iterable[ManifestRecord], split: str) -> list[ManifestRecord]:
    return [r for r in records if r.split == split]
