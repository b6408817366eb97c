"""Importance-weighted SNR per frame.

Band powers on the one-third-octave SII bands are tracked with a
minimum-statistics noise floor (recursive smoothing, trailing-window minimum,
bias compensation).  Band SNRs (power ratios, spectral-subtraction
style) are averaged with the SII band importance weights and the weighted
mean is expressed in dB.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import minimum_filter1d

from .spectral import band_importance

SMOOTHING = 0.85
WINDOW_FRAMES = 150
BIAS = 2.5
SNR_FLOOR_DB = -15.0
SNR_CEIL_DB = 60.0
ABS_FLOOR = 1e-10


def band_matrix(sample_rate: int, nfft: int) -> np.ndarray:
    """0/1 matrix mapping rfft bins to the SII third-octave bands."""
    centres = band_importance()[:, 0]
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    m = np.zeros((centres.size, freqs.size))
    for i, fc in enumerate(centres):
        lo, hi = fc * 2 ** (-1 / 6), min(fc * 2 ** (1 / 6), sample_rate / 2)
        sel = (freqs >= lo) & (freqs < hi)
        if not sel.any():
            sel[np.argmin(np.abs(freqs - fc))] = True
        m[i, sel] = 1.0
    return m


def noise_floor(band_power: np.ndarray) -> np.ndarray:
    """Minimum-statistics floor, causal: frame t sees frames ``t-W+1..t``."""
    smooth = np.empty_like(band_power)
    acc = band_power[0]
    for t in range(band_power.shape[0]):
        acc = SMOOTHING * acc + (1 - SMOOTHING) * band_power[t]
        smooth[t] = acc
    # the first frame of a causal window sits at origin (W-1)//2 relative to centre
    floor = minimum_filter1d(smooth, WINDOW_FRAMES, axis=0, mode="nearest",
                             origin=(WINDOW_FRAMES - 1) // 2)
    return BIAS * floor


def isnr_from_power(power: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """Per-frame iSNR (dB) from an ``(n_frames, n_bins)`` power spectrogram."""
    nfft = 2 * (power.shape[1] - 1)
    bands = power @ band_matrix(sample_rate, nfft).T
    floor = np.maximum(noise_floor(bands), ABS_FLOOR * max(float(bands.max()), 1e-300))
    xi = np.maximum(bands / floor - 1.0, 0.0)
    weighted = xi @ band_importance()[:, 1]
    with np.errstate(divide="ignore"):
        return np.clip(10 * np.log10(weighted), SNR_FLOOR_DB, SNR_CEIL_DB)


def isnr(w, grid, mask=None) -> np.ndarray:
    """Per-frame iSNR for a waveform.

    ``mask`` is accepted for interface symmetry with the other extractors; the
    floor tracker runs over every frame so its state is independent of the
    speech decisions.
    """
    from ..dsp import frame_signal
    from .spectral import power_spectrogram

    power = power_spectrogram(frame_signal(w.samples, grid, windowed=True))
    return isnr_from_power(power, w.sample_rate)
