"""Feature / posterior extraction from pretrained speech encoders.

Runs audio through a Wav2Vec2-family model and writes one KWSP file per
input: hidden-state frames (mode 2) from a chosen transformer layer, or,
when the checkpoint carries a CTC head, softmaxed per-frame posteriors
(mode 0). The special identifier ``base-untrained`` builds the base
architecture (12 layers, 768-dim embeddings, 20 ms stride) with random
weights, which exercises every shape and format contract without any
download.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import AudioError, load_wav
from .container import MODE_FEATURE, MODE_PROB, write_matrix

log = logging.getLogger(__name__)

UNTRAINED_BASE = "base-untrained"

# the base architecture hops 320 samples per output frame
SAMPLES_PER_FRAME = 320


class ModelLoadError(RuntimeError):
    pass


@dataclass(frozen=True)
class ExtractionJob:
    audio_paths: tuple[str, ...]
    model: str = UNTRAINED_BASE
    out_dir: str = "features"
    layer: int = -1
    frame_stride: int = 1
    output_mode: str = "features"  # features | probs
    metadata: dict[str, dict] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.frame_stride < 1:
            raise ValueError(f"frame_stride must be >= 1, got {self.frame_stride}")
        if self.output_mode not in ("features", "probs"):
            raise ValueError(f"output_mode must be features|probs, got {self.output_mode!r}")


def load_model(identifier: str, with_ctc_head: bool = False):
    """Instantiate the encoder; any load failure aborts the job."""
    import torch
    from transformers import Wav2Vec2Config, Wav2Vec2ForCTC, Wav2Vec2Model

    try:
        if identifier == UNTRAINED_BASE:
            model = Wav2Vec2Model(Wav2Vec2Config())
        elif with_ctc_head:
            model = Wav2Vec2ForCTC.from_pretrained(identifier)
        else:
            model = Wav2Vec2Model.from_pretrained(identifier)
    except Exception as err:
        raise ModelLoadError(f"cannot load model {identifier!r}: {err}") from err
    model.eval()
    torch.set_grad_enabled(False)
    return model


def _frames_for(model, waveform: np.ndarray, layer: int, output_mode: str) -> np.ndarray:
    import torch

    batch = torch.from_numpy(waveform).float().unsqueeze(0)
    if output_mode == "probs":
        out = model(batch)
        logits = out.logits[0]
        return torch.softmax(logits, dim=-1).numpy().astype(np.float32)
    out = model(batch, output_hidden_states=True)
    hidden = out.hidden_states[layer][0]
    return hidden.numpy().astype(np.float32)


def extract(job: ExtractionJob) -> tuple[list[Path], list[dict]]:
    """Write one KWSP file per readable audio input.

    Returns the written paths and matching manifest rows. Unreadable or
    empty audio is skipped with a warning; a model that fails to load
    aborts the whole job.
    """
    model = load_model(job.model, with_ctc_head=(job.output_mode == "probs"))
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    mode = MODE_PROB if job.output_mode == "probs" else MODE_FEATURE

    written: list[Path] = []
    rows: list[dict] = []
    for audio_path in job.audio_paths:
        utt_id = Path(audio_path).stem
        try:
            waveform = load_wav(audio_path)
        except AudioError as err:
            log.warning("skipping %s: %s", audio_path, err)
            continue
        frames = _frames_for(model, waveform, job.layer, job.output_mode)
        frames = frames[:: job.frame_stride]
        out_path = out_dir / f"{utt_id}.kwsp"
        write_matrix(out_path, frames, mode)
        written.append(out_path)
        meta = job.metadata.get(utt_id, {})
        rows.append({
            "utt_id": utt_id,
            "path": str(out_path),
            "keyword": meta.get("keyword", ""),
            "language": meta.get("language", ""),
            "split": meta.get("split", "UL"),
        })
    return written, rows


def write_manifest(path: str | Path, rows: Sequence[dict]) -> None:
    text = "\n".join(json.dumps(row, ensure_ascii=False) for row in rows)
    Path(path).write_text(text + "\n", "utf-8")


def load_metadata(path: str | Path) -> dict[str, dict]:
    """TSV sidecar: ``utt_id<TAB>keyword<TAB>language[<TAB>split]``."""
    table: dict[str, dict] = {}
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) not in (3, 4):
            raise ValueError(f"{path}: line {lineno}: expected 3 or 4 fields")
        entry = {"keyword": fields[1], "language": fields[2]}
        if len(fields) == 4:
            entry["split"] = fields[3]
        table[fields[0]] = entry
    return table
