"""Audio container and WAV file I/O.

Signals travel through the package as 1-D float64 arrays wrapped in an
AudioBuffer. On disk everything is mono 32-bit float WAV at 16 kHz; float32
values survive a write/read round trip bit-exactly because float64 holds
them without rounding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .exceptions import DataError

DEFAULT_SAMPLE_RATE = 16000

# Below this total energy a signal is treated as silent.
ZERO_ENERGY_EPS = 1e-12


@dataclass
class AudioBuffer:
    """Mono audio: float64 samples plus a sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise DataError(f"AudioBuffer needs 1-D samples, got shape {arr.shape}")
        if self.sample_rate <= 0:
            raise DataError(f"invalid sample rate {self.sample_rate}")
        self.samples = arr

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def energy(self) -> float:
        return float(np.dot(self.samples, self.samples))

    def is_silent(self, threshold: float = ZERO_ENERGY_EPS) -> bool:
        return self.energy() < threshold


def write_wav(path, buf: AudioBuffer) -> None:
    """Write mono 32-bit float WAV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), buf.sample_rate,
                  buf.samples.astype(np.float32))


def read_wav(path) -> AudioBuffer:
    """Read a mono WAV file. Accepts float32/float64 or PCM int16/int32."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as e:
        raise DataError(f"cannot read WAV file {path}: {e}")
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, got shape {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported WAV sample format {data.dtype}")
    return AudioBuffer(samples=samples, sample_rate=int(rate))
