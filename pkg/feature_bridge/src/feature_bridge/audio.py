"""Minimal wav loading: PCM wavs via the stdlib, resampled to 16 kHz mono."""

from __future__ import annotations

import wave
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

TARGET_RATE = 16000

_PCM_DTYPES = {1: np.int8, 2: np.int16, 4: np.int32}


class AudioError(ValueError):
    pass


def load_wav(path: str | Path, target_rate: int = TARGET_RATE) -> np.ndarray:
    """Float32 mono waveform in [-1, 1] at ``target_rate``."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            n = fh.getnframes()
            raw = fh.readframes(n)
    except (wave.Error, EOFError, OSError) as err:
        raise AudioError(f"{path}: unreadable wav ({err})") from None
    if n == 0:
        raise AudioError(f"{path}: empty audio")
    dtype = _PCM_DTYPES.get(width)
    if dtype is None:
        raise AudioError(f"{path}: unsupported sample width {width}")
    samples = np.frombuffer(raw, dtype=dtype).astype(np.float32)
    samples /= float(2 ** (8 * width - 1))
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    if rate != target_rate:
        from math import gcd

        g = gcd(rate, target_rate)
        samples = resample_poly(samples, target_rate // g, rate // g).astype(np.float32)
    return samples
