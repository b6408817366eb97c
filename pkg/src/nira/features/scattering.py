"""Two-layer wavelet-modulus scattering averaged on the 10 ms frame grid.

First layer: 20 analytic Gaussian band-pass filters, log-spaced between
125 Hz and 7 kHz, applied to the whole utterance; the modulus envelopes are
averaged with the frame taper.  Second layer: the first-layer envelopes are
filtered by 8 octave-spaced modulation wavelets (12.5 Hz .. 1.6 kHz); for each
modulation wavelet the frame-averaged moduli are pooled (averaged) over all
first-layer channels.  All 28 outputs are log-compressed.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from ..dsp import FrameGrid, Waveform, frame_signal

N_FIRST = 20
N_SECOND = 8
F1_LO, F1_HI = 125.0, 7000.0
F2_LO = 12.5
LOG_FLOOR = 1e-8


def first_order_centres() -> np.ndarray:
    return np.geomspace(F1_LO, F1_HI, N_FIRST)


def second_order_centres() -> np.ndarray:
    return F2_LO * 2.0 ** np.arange(N_SECOND)


def _gabor_bank(centres: np.ndarray, ratio: float, n: int, fs: int) -> np.ndarray:
    # one-sided Gaussians whose neighbours cross at half amplitude
    freqs = np.fft.fftfreq(n, 1.0 / fs)
    fwhm = centres * (ratio - 1.0)
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    bank = np.exp(-0.5 * ((freqs[None, :] - centres[:, None]) / sigma[:, None]) ** 2)
    bank[:, freqs <= 0] = 0.0
    return 2.0 * bank  # analytic: modulus of a real tone matches its amplitude


@lru_cache(maxsize=8)
def _banks(n: int, fs: int):
    c1 = first_order_centres()
    b1 = _gabor_bank(c1, c1[1] / c1[0], n, fs)
    b2 = _gabor_bank(second_order_centres(), 2.0, n, fs)
    return b1, b2


def scattering_features(w: Waveform, grid: FrameGrid) -> np.ndarray:
    """Log scattering coefficients, shape ``(n_frames, 28)``.

    Columns 0..19 are first-order bands (ascending centre frequency), columns
    20..27 the pooled second-order paths (ascending modulation frequency).
    """
    x = w.samples
    n = sfft.next_fast_len(x.size)
    b1, b2 = _banks(n, w.sample_rate)
    X = sfft.fft(x, n)
    u1 = np.abs(sfft.ifft(X[None, :] * b1, axis=1))[:, : x.size]

    taper = grid.taper()
    taper = taper / taper.sum()

    def frame_avg(sig):
        # sig: (channels, samples) -> (n_frames, channels)
        return np.stack([frame_signal(ch, grid) @ taper for ch in sig], axis=1)

    s1 = frame_avg(u1)
    U1 = sfft.fft(u1, n, axis=1)
    s2 = np.zeros((s1.shape[0], N_SECOND))
    for j in range(N_SECOND):
        u2 = np.abs(sfft.ifft(U1 * b2[j][None, :], axis=1))[:, : x.size]
        s2[:, j] = frame_avg(u2).mean(axis=1)
    return np.log(np.concatenate([s1, s2], axis=1) + LOG_FLOOR)
