"""WAV ingestion and export."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import SAMPLE_RATE, Waveform
from .errors import UnsupportedAudio


def read_wav(path, expected_rate: int = SAMPLE_RATE) -> Waveform:
    """Read a mono WAV file (16-bit PCM or float) at the canonical rate."""
    rate, data = wavfile.read(str(path))
    if rate != expected_rate:
        raise UnsupportedAudio(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    if data.ndim != 1:
        raise UnsupportedAudio(f"{path}: {data.shape[1]} channels, expected mono")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise UnsupportedAudio(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(x, rate)


def write_wav(path, w: Waveform, pcm16: bool = True) -> None:
    """Write ``w`` as 16-bit PCM (clipped) or as float32."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if pcm16:
        data = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype(np.int16)
    else:
        data = w.samples.astype(np.float32)
    wavfile.write(str(path), w.sample_rate, data)
