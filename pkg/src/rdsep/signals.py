"""Multichannel audio container and WAV file I/O."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile


@dataclass(frozen=True)
class MultichannelSignal:
    """A sample-rate-tagged block of audio, stored as channels x samples.

    Amplitudes are nominally in [-1, 1] but are not clipped; all channels
    have equal length.
    """

    sample_rate: int
    data: np.ndarray

    def __post_init__(self):
        data = np.atleast_2d(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2:
            raise ValueError("signal data must be a 2-D channels x samples array")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "data", data)

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        """Signal length in seconds."""
        return self.n_samples / self.sample_rate

    def channel(self, index: int) -> np.ndarray:
        return self.data[index]

    def slice(self, start: int, stop: int | None = None) -> "MultichannelSignal":
        """Sample-range view as a new signal (data is copied)."""
        return MultichannelSignal(self.sample_rate, self.data[:, start:stop].copy())


def as_mono(signal: "MultichannelSignal | np.ndarray") -> np.ndarray:
    """Return a 1-D float64 view of a mono signal or 1-D array."""
    if isinstance(signal, MultichannelSignal):
        if signal.n_channels != 1:
            raise ValueError("expected a mono signal")
        return signal.data[0]
    arr = np.asarray(signal, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D array")
    return arr


def read_wav(path: str | Path) -> MultichannelSignal:
    """Read a WAV file (PCM 16/32-bit or IEEE float) into float64 channels.

    Integer PCM is scaled to [-1, 1); float data is passed through.
    """
    rate, data = wavfile.read(str(path))
    if data.ndim == 1:
        data = data[:, None]
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    else:
        data = data.astype(np.float64)
    return MultichannelSignal(int(rate), data.T)


def write_wav(path: str | Path, signal: MultichannelSignal, sample_format: str = "float32") -> None:
    """Write a signal as a WAV file.

    sample_format is "float32" (IEEE float) or "pcm16" (clipped and scaled
    16-bit integer). Channel layout and sample rate are preserved.
    """
    data = signal.data.T
    if sample_format == "float32":
        out = data.astype(np.float32)
    elif sample_format == "pcm16":
        clipped = np.clip(data, -1.0, 1.0)
        out = np.round(clipped * 32767.0).astype(np.int16)
    else:
        raise ValueError(f"unknown sample format: {sample_format!r}")
    if out.shape[1] == 1:
        out = out[:, 0]
    wavfile.write(str(path), signal.sample_rate, out)
