"""ITU-T P.56 (method B) active speech level and a frame-level speech mask.

The envelope detector, hangover and 15.9 dB margin follow P.56.  The
threshold ladder is anchored to the envelope peak instead of digital full
scale, which makes the measurement exactly gain-equivariant for any gain
(full-scale anchoring is only equivariant for powers of two).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .dsp import FrameGrid, Waveform, frame_signal
from .errors import NoActivity

TIME_CONSTANT = 0.03
HANGOVER = 0.2
MARGIN_DB = 15.9
N_THRESHOLDS = 16
MIN_ACTIVE_FRAMES = 10

_TINY = 1e-300


@dataclass
class SpeechMask:
    active: np.ndarray
    active_level_db: float
    activity_factor: float
    p56_activity: float

    @property
    def n_active(self) -> int:
        return int(np.count_nonzero(self.active))


def _envelope(x: np.ndarray, fs: int) -> np.ndarray:
    g = np.exp(-1.0 / (fs * TIME_CONSTANT))
    p = lfilter([1.0 - g], [1.0, -g], np.abs(x))
    return lfilter([1.0 - g], [1.0, -g], p)


def _activity_counts(q: np.ndarray, thresholds: np.ndarray, hang: int) -> np.ndarray:
    # a sample counts as active at threshold c if the envelope reached c
    # within the preceding `hang` samples (inclusive)
    counts = np.empty(thresholds.size)
    for j, c in enumerate(thresholds):
        above = np.concatenate(([0], np.cumsum(q >= c)))
        n = np.arange(1, q.size + 1)
        window = above[n] - above[np.maximum(n - hang - 1, 0)]
        counts[j] = np.count_nonzero(window)
    return counts


def active_level_p56(w: Waveform):
    """Return ``(active_level_db, activity_factor)``.

    Levels are mean-square power in dB relative to a full-scale amplitude of
    one, so a full-scale sinusoid sits at -3.01 dB.
    """
    x = w.samples
    if x.size == 0:
        raise NoActivity("empty waveform")
    fs = w.sample_rate
    sq = float(np.sum(x * x))
    q = _envelope(x, fs)
    qmax = float(np.max(q))
    if sq <= 0 or qmax <= 0:
        raise NoActivity("digital silence")

    thresholds = qmax * 2.0 ** np.arange(-(N_THRESHOLDS - 1), 1)
    hang = int(np.ceil(fs * HANGOVER))
    counts = _activity_counts(q, thresholds, hang)

    with np.errstate(divide="ignore"):
        a_db = 10 * np.log10(sq / np.maximum(counts, _TINY))
    c_db = 20 * np.log10(thresholds)
    diff = a_db - c_db
    if counts[0] == 0 or diff[0] <= MARGIN_DB:
        raise NoActivity("no threshold yields speech activity")

    level_db = None
    for j in range(1, N_THRESHOLDS):
        if counts[j] == 0 or diff[j] <= MARGIN_DB:
            if counts[j] == 0:
                level_db = a_db[j - 1]
            else:
                t = (diff[j - 1] - MARGIN_DB) / (diff[j - 1] - diff[j])
                level_db = a_db[j - 1] + t * (a_db[j] - a_db[j - 1])
            break
    if level_db is None:
        level_db = a_db[-1]

    long_term = sq / x.size
    activity = long_term / 10 ** (level_db / 10)
    return float(level_db), float(min(activity, 1.0))


def frame_levels_db(w: Waveform, grid: FrameGrid) -> np.ndarray:
    frames = frame_signal(w.samples, grid)
    ms = np.mean(frames * frames, axis=1)
    with np.errstate(divide="ignore"):
        return 10 * np.log10(ms)


def speech_frame_mask(w: Waveform, grid: FrameGrid, margin_db: float = MARGIN_DB) -> SpeechMask:
    """Mark frames whose RMS level is within ``margin_db`` of the active level."""
    level_db, activity = active_level_p56(w)
    active = frame_levels_db(w, grid) >= level_db - margin_db
    return SpeechMask(
        active=active,
        active_level_db=level_db,
        activity_factor=float(np.mean(active)),
        p56_activity=activity,
    )
