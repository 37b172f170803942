"""KWSP container I/O.

One binary format carries every frame-synchronous matrix in the toolkit:
per-frame token posteriors (mode 0), pre-softmax logits (mode 1), and raw
acoustic feature frames (mode 2). Layout, all little-endian:

    magic ``KWSP`` | u16 version | u8 mode | u32 T | u32 V | T*V float32

Rows are frames. A CSV debug format (one frame per line, ``#`` comments
allowed) can be read as well.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"KWSP"
VERSION = 1
MODE_PROB = 0
MODE_LOGIT = 1
MODE_FEATURE = 2

_HEADER = struct.Struct("<4sHBII")

PROB_ROW_SUM_TOL = 1e-5


class KwspError(ValueError):
    """Corrupt or non-conforming KWSP file."""


@dataclass(frozen=True)
class PosteriorMatrix:
    """T x V grid of per-frame token scores.

    Probability mode: every row sums to 1 (within 1e-5) and values lie in
    [0, 1]. Logit mode: any finite values, softmaxed on demand.
    """

    values: np.ndarray
    is_logit: bool = False

    def __post_init__(self) -> None:
        v = self.values
        if v.ndim != 2:
            raise KwspError(f"expected a 2-D grid, got shape {v.shape}")
        t, vocab = v.shape
        if t < 1 or vocab < 2:
            raise KwspError(f"need T >= 1 and V >= 2, got T={t}, V={vocab}")
        if not np.all(np.isfinite(v)):
            raise KwspError("non-finite values")
        if not self.is_logit:
            if v.min() < 0.0 or v.max() > 1.0:
                raise KwspError("probability mode requires values in [0, 1]")
            sums = v.sum(axis=1)
            bad = np.abs(sums - 1.0) > PROB_ROW_SUM_TOL
            if bad.any():
                raise KwspError(
                    f"probability rows must sum to 1 within {PROB_ROW_SUM_TOL}; "
                    f"first bad frame {int(np.argmax(bad))} sums to {sums[bad][0]:.6f}")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.values.shape[1]

    def log_probs(self) -> np.ndarray:
        """Per-frame log-probabilities as float64 (log-softmax in logit mode)."""
        v = self.values.astype(np.float64)
        if self.is_logit:
            shifted = v - v.max(axis=1, keepdims=True)
            return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        with np.errstate(divide="ignore"):
            return np.log(v)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax in float64."""
    shifted = logits.astype(np.float64) - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def write_kwsp(path: str | Path, values: np.ndarray, mode: int) -> None:
    if mode not in (MODE_PROB, MODE_LOGIT, MODE_FEATURE):
        raise KwspError(f"unknown mode byte {mode}")
    if values.ndim != 2:
        raise KwspError(f"expected a 2-D grid, got shape {values.shape}")
    t, v = values.shape
    data = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, mode, t, v))
        fh.write(data.tobytes())


def read_kwsp(path: str | Path) -> tuple[int, np.ndarray]:
    """Read any KWSP file; returns (mode, T x V float32 array)."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise KwspError(f"{path}: truncated header")
    magic, version, mode, t, v = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise KwspError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise KwspError(f"{path}: unsupported version {version}")
    if mode not in (MODE_PROB, MODE_LOGIT, MODE_FEATURE):
        raise KwspError(f"{path}: unknown mode byte {mode}")
    expected = _HEADER.size + 4 * t * v
    if len(blob) != expected:
        raise KwspError(f"{path}: expected {expected} bytes, found {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t, v)
    return mode, values.copy()


def validate_kwsp(path: str | Path) -> tuple[int, int, int]:
    """Full conformance check; returns (mode, T, V) or raises :class:`KwspError`.

    Checks the header, the payload size, value finiteness, and (for
    probability mode) row normalization.
    """
    mode, values = read_kwsp(path)
    if not np.all(np.isfinite(values)):
        raise KwspError(f"{path}: non-finite values")
    if mode == MODE_PROB:
        PosteriorMatrix(values, is_logit=False)
    return mode, values.shape[0], values.shape[1]


def write_posteriors(path: str | Path, post: PosteriorMatrix) -> None:
    write_kwsp(path, post.values, MODE_LOGIT if post.is_logit else MODE_PROB)


def read_posteriors(path: str | Path) -> PosteriorMatrix:
    mode, values = read_kwsp(path)
    if mode == MODE_FEATURE:
        raise KwspError(f"{path}: feature file where posteriors were expected")
    return PosteriorMatrix(values, is_logit=(mode == MODE_LOGIT))


def write_features(path: str | Path, frames: np.ndarray) -> None:
    write_kwsp(path, frames, MODE_FEATURE)


def read_features(path: str | Path) -> np.ndarray:
    mode, values = read_kwsp(path)
    if mode != MODE_FEATURE:
        raise KwspError(f"{path}: posterior file where features were expected")
    return values


def read_posterior_csv(path: str | Path, is_logit: bool = False) -> PosteriorMatrix:
    """Read the CSV debug format: one comma-separated frame per line."""
    rows = []
    for lineno, raw in enumerate(Path(path).read_text("utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rows.append([float(x) for x in line.split(",")])
        except ValueError as err:
            raise KwspError(f"{path}: line {lineno}: {err}") from None
    if not rows:
        raise KwspError(f"{path}: no frames")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise KwspError(f"{path}: ragged rows (widths {sorted(widths)})")
    return PosteriorMatrix(np.asarray(rows, dtype=np.float32), is_logit=is_logit)
