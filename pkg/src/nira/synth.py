"""Speech-like source synthesis, noise generators and reverberant mixing.

The clean "speech" is a source-filter caricature: glottal pulse trains with
an F0 contour through vowel formant resonators, interleaved with fricative
noise bursts and pauses.  It has the properties the estimators rely on
(harmonicity, syllabic 2-8 Hz modulation, onsets and free decays) without
needing a licensed corpus.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve, lfilter

from .dsp import SAMPLE_RATE, Waveform, normalize_peak
from .errors import NoiseTooShort
from .vad import active_level_p56

# (F1, F2, F3) in Hz for a handful of vowels
_VOWELS = np.array([
    [730, 1090, 2440],
    [270, 2290, 3010],
    [530, 1840, 2480],
    [570, 840, 2410],
    [300, 870, 2240],
    [660, 1720, 2410],
    [440, 1020, 2240],
    [490, 1350, 1690],
])
_BANDWIDTHS = np.array([80.0, 100.0, 140.0])


def _resonator(f: float, bw: float, fs: int):
    r = np.exp(-np.pi * bw / fs)
    a = [1.0, -2 * r * np.cos(2 * np.pi * f / fs), r * r]
    return [sum(a)], a


def _voiced_segment(n: int, fs: int, rng: np.random.Generator, f0_base: float) -> np.ndarray:
    f0 = f0_base * (1 + 0.15 * np.sin(np.linspace(0, np.pi * rng.uniform(0.5, 1.5), n) + rng.uniform(0, 6)))
    phase = np.cumsum(f0 / fs)
    src = np.zeros(n)
    src[np.nonzero(np.diff(np.floor(phase), prepend=0.0))[0]] = 1.0
    src = lfilter([1.0], [1.0, -0.97], src)  # glottal roll-off
    src += 0.02 * rng.standard_normal(n)
    formants = _VOWELS[rng.integers(len(_VOWELS))] * rng.uniform(0.9, 1.1)
    y = src
    for f, bw in zip(formants, _BANDWIDTHS):
        b, a = _resonator(f, bw, fs)
        y = lfilter(b, a, y)
    return y / (np.std(y) + 1e-12)


def _unvoiced_segment(n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    b, a = _resonator(rng.uniform(2500, 6000), rng.uniform(800, 2000), fs)
    y = lfilter(b, a, rng.standard_normal(n))
    return y / (np.std(y) + 1e-12)


def _envelope(n: int, fs: int) -> np.ndarray:
    ramp = min(n // 3, int(0.02 * fs))
    env = np.ones(n)
    if ramp > 0:
        r = 0.5 - 0.5 * np.cos(np.linspace(0, np.pi, ramp))
        env[:ramp] = r
        env[-ramp:] = r[::-1]
    return env


def speech_like(duration: float, rng: np.random.Generator, fs: int = SAMPLE_RATE,
                f0: float | None = None) -> Waveform:
    """Syllable-structured synthetic speech of exactly ``duration`` seconds."""
    n_total = int(round(duration * fs))
    f0 = rng.uniform(90, 220) if f0 is None else f0
    out = np.zeros(n_total)
    pos = int(rng.uniform(0.05, 0.2) * fs)
    while pos < n_total:
        word_syll = rng.integers(1, 4)
        for _ in range(word_syll):
            if rng.random() < 0.35:
                n = int(rng.uniform(0.04, 0.12) * fs)
                seg = 0.3 * _unvoiced_segment(n, fs, rng)
            else:
                n = int(rng.uniform(0.08, 0.28) * fs)
                seg = _voiced_segment(n, fs, rng, f0)
            seg = seg * _envelope(n, fs) * 10 ** (rng.uniform(-8, 0) / 20)
            end = min(pos + n, n_total)
            out[pos:end] += seg[: end - pos]
            pos = end + int(rng.uniform(0.0, 0.03) * fs)
            if pos >= n_total:
                break
        pos += int(rng.uniform(0.1, 0.45) * fs)
    if not np.any(out):
        out[n_total // 2] = 1.0
    return normalize_peak(Waveform(out, fs))


def white_noise(duration: float, rng: np.random.Generator, fs: int = SAMPLE_RATE) -> Waveform:
    return Waveform(rng.standard_normal(int(round(duration * fs))), fs)


def babble_noise(duration: float, rng: np.random.Generator, fs: int = SAMPLE_RATE,
                 talkers: int = 6) -> Waveform:
    x = sum(speech_like(duration, rng, fs).samples for _ in range(talkers))
    return Waveform(x / np.std(x), fs)


def fan_noise(duration: float, rng: np.random.Generator, fs: int = SAMPLE_RATE) -> Waveform:
    """Stationary low-frequency-weighted noise with a blade-pass hum."""
    n = int(round(duration * fs))
    x = lfilter([1.0], [1.0, -0.95], rng.standard_normal(n))
    t = np.arange(n) / fs
    blade = rng.uniform(80, 140)
    for k in range(1, 4):
        x += 0.5 / k * np.std(x) * np.sin(2 * np.pi * k * blade * t + rng.uniform(0, 2 * np.pi))
    return Waveform(x / np.std(x), fs)


NOISE_GENERATORS = {
    "white": white_noise,
    "babble": babble_noise,
    "fan": fan_noise,
}


def make_noise(kind: str, duration: float, rng: np.random.Generator, fs: int = SAMPLE_RATE) -> Waveform:
    try:
        gen = NOISE_GENERATORS[kind]
    except KeyError:
        raise ValueError(f"unknown noise type {kind!r}") from None
    return gen(duration, rng, fs)


def reverberate(clean: Waveform, rir) -> np.ndarray:
    """Full linear convolution of ``clean`` with ``rir``."""
    return fftconvolve(clean.samples, np.asarray(rir, dtype=np.float64))


def synth_utterance(clean: Waveform, rir, noise: Waveform | None, snr_db: float) -> Waveform:
    """Reverberate ``clean`` and add ``noise`` at ``snr_db``.

    The SNR is defined on P.56 active levels: the noise is scaled so that
    ``10 log10(P_reverb / P_noise) == snr_db`` with ``P_reverb`` the active
    speech power of the reverberant signal and ``P_noise`` the mean power of
    the noise segment actually added.  ``snr_db = inf`` (or ``noise=None``)
    means no noise.  The mixture is peak-normalised.
    """
    rev = reverberate(clean, rir)
    if noise is None or np.isposinf(snr_db):
        return normalize_peak(Waveform(rev, clean.sample_rate))
    if noise.samples.size < rev.size:
        raise NoiseTooShort(f"noise has {noise.samples.size} samples, need {rev.size}")
    nz = noise.samples[: rev.size]
    speech_db, _ = active_level_p56(Waveform(rev, clean.sample_rate))
    noise_db = 10 * np.log10(np.mean(nz * nz))
    gain = 10 ** ((speech_db - noise_db - snr_db) / 20)
    return normalize_peak(Waveform(rev + gain * nz, clean.sample_rate))
