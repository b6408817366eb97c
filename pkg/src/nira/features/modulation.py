"""Modulation-spectrum moments around the dominant acoustic band.

Acoustic band envelopes come from a 23-channel mel filterbank on the 10 ms
frame grid.  For every frame a Hamming-tapered context of 25 envelope frames
(250 ms) centred on the frame is Fourier transformed; the modulation power
spectrum of the most energetic band and of its two neighbours is reduced to
its mean frequency and second to fourth central moments (Hz, Hz^2, ...).
"""

from __future__ import annotations

import numpy as np

from .spectral import NFFT, mel_filterbank

N_BANDS = 23
CONTEXT_FRAMES = 25
MOD_NFFT = 128
MOD_FMAX = 20.0
# the envelope mean is attenuated (not removed) so that an unmodulated band
# still has a well-defined spectrum concentrated at 0 Hz
DC_RETAIN = 1e-4


def band_envelopes(power: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """Amplitude envelopes ``(n_frames, N_BANDS)`` from a power spectrogram."""
    nfft = 2 * (power.shape[1] - 1)
    fb = mel_filterbank(sample_rate, nfft, N_BANDS)
    return np.sqrt(power @ fb.T)


def neighbour_bands(b: np.ndarray, n_bands: int = N_BANDS) -> np.ndarray:
    """The two bands adjacent to ``b``; at an edge, the two nearest on the open side."""
    b = np.asarray(b)
    lo = np.where(b == 0, 1, np.where(b == n_bands - 1, n_bands - 3, b - 1))
    hi = np.where(b == 0, 2, np.where(b == n_bands - 1, n_bands - 2, b + 1))
    return np.stack([lo, hi], axis=-1)


def modulation_spectra(env: np.ndarray, frame_rate: float):
    """Per-frame modulation power spectra, ``(n_frames, n_bands, n_mod)``."""
    half = CONTEXT_FRAMES // 2
    padded = np.pad(env, ((half, half), (0, 0)), mode="edge")
    ctx = np.lib.stride_tricks.sliding_window_view(padded, CONTEXT_FRAMES, axis=0)
    win = np.hamming(CONTEXT_FRAMES)
    mean = ctx.mean(axis=-1, keepdims=True)
    seg = (ctx - (1.0 - np.sqrt(DC_RETAIN)) * mean) * win
    spec = np.fft.rfft(seg, MOD_NFFT, axis=-1)
    freqs = np.fft.rfftfreq(MOD_NFFT, 1.0 / frame_rate)
    keep = freqs <= MOD_FMAX
    return spec.real[..., keep] ** 2 + spec.imag[..., keep] ** 2, freqs[keep], ctx


def _moments(p: np.ndarray, f: np.ndarray) -> np.ndarray:
    total = p.sum(axis=-1, keepdims=True)
    # all-zero context: treat as pure DC
    p = np.where(total > 0, p, np.eye(1, p.shape[-1])[0])
    prob = p / p.sum(axis=-1, keepdims=True)
    mu = prob @ f
    dev = f[None, :] - mu[:, None]
    m2 = np.sum(prob * dev**2, axis=-1)
    m3 = np.sum(prob * dev**3, axis=-1)
    m4 = np.sum(prob * dev**4, axis=-1)
    return np.column_stack([mu, m2, m3, m4])


def modulation_features(power: np.ndarray, frame_rate: float = 100.0, sample_rate: int = 16000):
    """12 values per frame: 4 moments for the dominant band and its two neighbours.

    Returns ``(features, dominant_band)``.
    """
    env = band_envelopes(power, sample_rate)
    spec, freqs, ctx = modulation_spectra(env, frame_rate)
    energy = np.sum(ctx**2, axis=-1)
    dominant = np.argmax(energy, axis=1)
    bands = np.column_stack([dominant, neighbour_bands(dominant)])
    rows = np.arange(env.shape[0])[:, None]
    chosen = spec[rows, bands]  # (n_frames, 3, n_mod)
    out = _moments(chosen.reshape(-1, freqs.size), freqs).reshape(env.shape[0], 12)
    return out, dominant


def modulation_features_from_wave(w, grid):
    from ..dsp import frame_signal
    from .spectral import power_spectrogram

    power = power_spectrogram(frame_signal(w.samples, grid, windowed=True), NFFT)
    return modulation_features(power, w.sample_rate / grid.hop, w.sample_rate)
