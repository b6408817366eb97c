"""Short-time spectra, MFCCs and long-term-deviation (PLD) descriptors."""

from __future__ import annotations

from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.fft import dct, rfft

NFFT = 512
N_MEL = 26
N_MFCC = 12


def power_spectrogram(windowed_frames: np.ndarray, nfft: int = NFFT) -> np.ndarray:
    spec = rfft(windowed_frames, nfft, axis=-1)
    return spec.real**2 + spec.imag**2


def _load_table(name: str) -> np.ndarray:
    text = resources.files("nira.features").joinpath("data").joinpath(name).read_text()
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")][1:]
    return np.array([[float(v) for v in ln.split(",")] for ln in rows])


@lru_cache(maxsize=None)
def ltass_db(sample_rate: int = 16000, nfft: int = NFFT) -> np.ndarray:
    """LTASS level (dB) at every rfft bin, interpolated on a log-frequency axis."""
    table = _load_table("ltass.csv")
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    logf = np.log(np.maximum(freqs, table[0, 0]))
    out = np.interp(logf, np.log(table[:, 0]), table[:, 1])
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def band_importance() -> np.ndarray:
    """``(freq_hz, importance)`` rows of the one-third-octave SII weights."""
    table = _load_table("band_importance.csv")
    table.setflags(write=False)
    return table


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def mel_filterbank(sample_rate: int = 16000, nfft: int = NFFT, n_filters: int = N_MEL,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters, shape ``(n_filters, nfft // 2 + 1)``."""
    fmax = sample_rate / 2 if fmax is None else fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_filters + 2))
    freqs = np.fft.rfftfreq(nfft, 1.0 / sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    fb.setflags(write=False)
    return fb


def mfcc_from_power(power: np.ndarray, sample_rate: int = 16000, floor: float = 1e-20) -> np.ndarray:
    """Cepstral coefficients 1..12 (c0 dropped) from power spectra.

    Log mel energies are floored at ``floor`` before the orthonormal DCT-II,
    so a pure gain change only moves c0.
    """
    nfft = 2 * (power.shape[-1] - 1)
    energies = power @ mel_filterbank(sample_rate, nfft).T
    logmel = np.log(np.maximum(energies, floor))
    return dct(logmel, type=2, norm="ortho", axis=-1)[..., 1 : N_MFCC + 1]


def mfcc(frame: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """12 MFCCs of one already-windowed frame."""
    return mfcc_from_power(power_spectrogram(frame[None, :]), sample_rate)[0]


def normalize_columns(x: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance columns (population variance).

    Constant columns are only centred.
    """
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd[sd == 0] = 1.0
    return (x - mu) / sd


def pld_from_power(power: np.ndarray, sample_rate: int = 16000, floor: float | None = None) -> np.ndarray:
    """Per-bin log deviation (dB) of frame spectra from the LTASS, DC bin excluded."""
    nfft = 2 * (power.shape[-1] - 1)
    if floor is None:
        floor = 1e-12 * max(float(np.mean(power)), 1e-300)
    ref = ltass_db(sample_rate, nfft)[1:]
    return 10.0 * np.log10(np.maximum(power[..., 1:], floor)) - ref


def pld_descriptors(pld: np.ndarray) -> np.ndarray:
    """Centroid, dynamics and flatness for each row of a PLD matrix.

    * centroid: normalised frequency (0..1] weighted by the linear-power
      deviation ``10**(PLD/10)``;
    * dynamics: mean squared bin-wise difference to the previous row (0 for
      the first row);
    * flatness: geometric over arithmetic mean of ``PLD - min(PLD) + 1``.
    """
    pld = np.atleast_2d(pld)
    nbins = pld.shape[1]
    fnorm = np.arange(1, nbins + 1) / nbins
    shifted = pld - pld.max(axis=1, keepdims=True)
    w = 10.0 ** (shifted / 10.0)
    centroid = (w @ fnorm) / w.sum(axis=1)

    dyn = np.zeros(pld.shape[0])
    if pld.shape[0] > 1:
        dyn[1:] = np.mean(np.diff(pld, axis=0) ** 2, axis=1)

    pos = pld - pld.min(axis=1, keepdims=True) + 1.0
    flatness = np.exp(np.mean(np.log(pos), axis=1)) / np.mean(pos, axis=1)
    return np.column_stack([centroid, dyn, flatness])


def pld_features(frame_power: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """(centroid, dynamics, flatness) for a single power spectrum.

    With a single frame the dynamics term is 0; use :func:`pld_descriptors` on
    a PLD matrix for the frame-to-frame value.
    """
    return pld_descriptors(pld_from_power(np.atleast_2d(frame_power), sample_rate))[0]
