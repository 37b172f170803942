"""Writer/reader for the KWSP container consumed by the keyword toolkit.

Implemented against the published layout (not by importing the toolkit):
magic ``KWSP`` | u16 version | u8 mode | u32 T | u32 V | T*V float32,
little-endian, row-major frames. Mode 0 carries per-frame probabilities,
mode 2 raw feature frames.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KWSP"
VERSION = 1
MODE_PROB = 0
MODE_LOGIT = 1
MODE_FEATURE = 2

_HEADER = struct.Struct("<4sHBII")


class ContainerError(ValueError):
    pass


def write_matrix(path: str | Path, values: np.ndarray, mode: int) -> None:
    if values.ndim != 2:
        raise ContainerError(f"expected frames x dim, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ContainerError("refusing to write non-finite values")
    frames, dim = values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, mode, frames, dim))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_matrix(path: str | Path) -> tuple[int, np.ndarray]:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ContainerError(f"{path}: truncated header")
    magic, version, mode, frames, dim = _HEADER.unpack_from(blob)
    if magic != MAGIC or version != VERSION:
        raise ContainerError(f"{path}: bad magic/version")
    if len(blob) != _HEADER.size + 4 * frames * dim:
        raise ContainerError(f"{path}: payload size mismatch")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return mode, values.reshape(frames, dim).copy()
