"""Noise-robust pitch tracking in the log-frequency domain (PEFAC style).

Each frame's power spectrum is resampled onto a log-frequency axis, whitened
by a frequency-smoothed long-term average, and cross-correlated with a
harmonic comb whose zero-mean shape penalises sub- and super-harmonics.  The
comb peak gives the F0 candidate; a normalised autocorrelation at the
candidate lag gives the voicing decision.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import rfft
from scipy.ndimage import uniform_filter1d
from scipy.signal import fftconvolve

from ..dsp import FrameGrid, Waveform

F0_MIN = 50.0
F0_MAX = 400.0
WINDOW_S = 0.064
NFFT = 4096
LOG_STEP = 0.005
F_LO, F_HI = 30.0, 5000.0
N_HARMONICS = 10
COMB_GAMMA = 1.8
VOICING_THRESHOLD = 0.5
DEFAULT_PERIOD_MS = 1000.0 / np.sqrt(F0_MIN * F0_MAX)


def _comb_kernel():
    lo = int(round(np.log(0.5) / LOG_STEP))
    hi = int(round(np.log(N_HARMONICS + 0.5) / LOG_STEP))
    u = np.arange(lo, hi + 1) * LOG_STEP
    h = 1.0 / (COMB_GAMMA - np.cos(2 * np.pi * np.exp(u)))
    return u, h - h.mean()


def _long_frames(x: np.ndarray, grid: FrameGrid, n_frames: int, length: int) -> np.ndarray:
    centres = np.arange(n_frames) * grid.hop + grid.frame_length // 2
    half = length // 2
    xp = np.pad(x, (half, half))
    idx = centres[:, None] + np.arange(length)[None, :]
    return xp[idx]


def _voicing(frames: np.ndarray, lags: np.ndarray) -> np.ndarray:
    n = frames.shape[1]
    ncc = np.zeros(frames.shape[0])
    for i, lag in enumerate(lags):
        best = 0.0
        for L in (lag - 1, lag, lag + 1):
            if L < 1 or L >= n:
                continue
            a, b = frames[i, : n - L], frames[i, L:]
            den = np.sqrt(np.dot(a, a) * np.dot(b, b))
            if den > 0:
                best = max(best, float(np.dot(a, b) / den))
        ncc[i] = best
    return ncc


def pitch_pefac(w: Waveform, grid: FrameGrid):
    """Per-frame pitch period in ms and a voicing flag.

    Unvoiced frames hold the most recent voiced period (frames before the
    first voiced one take the first voiced value; a fully unvoiced utterance
    gets the geometric centre of the search range).
    """
    fs = w.sample_rate
    x = w.samples
    n_frames = grid.n_frames(x.size)
    length = int(round(WINDOW_S * fs))
    frames = _long_frames(x, grid, n_frames, length)
    win = np.hamming(length)
    spec = rfft(frames * win, NFFT, axis=1)
    power = spec.real**2 + spec.imag**2

    freqs = np.fft.rfftfreq(NFFT, 1.0 / fs)
    q = np.arange(np.log(F_LO), np.log(min(F_HI, fs / 2)), LOG_STEP)
    fq = np.exp(q)
    pos = np.interp(fq, freqs, np.arange(freqs.size))
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    logpow = power[:, i0] * (1 - frac) + power[:, np.minimum(i0 + 1, freqs.size - 1)] * frac

    longterm = uniform_filter1d(logpow.mean(axis=0), size=int(round(np.log(2) / 3 / LOG_STEP)) * 2 + 1,
                                mode="nearest")
    floor = 1e-12 * max(float(longterm.max()), 1e-300)
    amp = np.sqrt(logpow / np.maximum(longterm, floor))

    u, h = _comb_kernel()
    score = fftconvolve(amp, h[None, ::-1], mode="full", axes=1)
    # score[:, k + len(h) - 1] = sum_j h[j] amp[:, k + j], candidate f0 = exp(q[k] - u[0])
    offset = len(h) - 1
    shift = int(round(-u[0] / LOG_STEP))
    k_lo = int(np.ceil((np.log(F0_MIN) - q[0]) / LOG_STEP)) - shift
    k_hi = int(np.floor((np.log(F0_MAX) - q[0]) / LOG_STEP)) - shift
    cand = score[:, offset + k_lo : offset + k_hi + 1]
    best = np.argmax(cand, axis=1)
    refine = np.zeros(n_frames)
    inner = (best > 0) & (best < cand.shape[1] - 1)
    rows = np.nonzero(inner)[0]
    if rows.size:
        y0, y1, y2 = cand[rows, best[rows] - 1], cand[rows, best[rows]], cand[rows, best[rows] + 1]
        den = y0 - 2 * y1 + y2
        refine[rows] = np.where(den < 0, 0.5 * (y0 - y2) / np.where(den < 0, den, -1.0), 0.0)
    logf0 = q[0] + (k_lo + best + refine + shift) * LOG_STEP
    f0 = np.clip(np.exp(logf0), F0_MIN, F0_MAX)

    energy = np.mean(frames * frames, axis=1)
    audible = energy > 1e-4 * max(float(energy.max()), 1e-300)
    ncc = _voicing(frames, np.round(fs / f0).astype(int))
    voiced = audible & (ncc >= VOICING_THRESHOLD)

    period = 1000.0 / f0
    out = np.empty(n_frames)
    if not voiced.any():
        out[:] = DEFAULT_PERIOD_MS
        return out, voiced
    idx = np.where(voiced, np.arange(n_frames), -1)
    idx = np.maximum.accumulate(idx)
    first = int(np.argmax(voiced))
    idx[idx < 0] = first
    out[:] = period[idx]
    return out, voiced
