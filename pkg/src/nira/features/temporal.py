"""Time-domain frame statistics: zero crossings, variance, Hilbert envelope."""

import numpy as np

from ..dsp import FrameGrid, Waveform, frame_signal, hilbert_envelope


def zcr(frame) -> float:
    """Fraction of adjacent sample pairs whose sign differs (zero counts as positive)."""
    return float(zcr_frames(np.asarray(frame, dtype=np.float64)[None, :])[0])


def zcr_frames(frames: np.ndarray) -> np.ndarray:
    pos = frames >= 0
    return np.count_nonzero(pos[:, 1:] != pos[:, :-1], axis=1) / (frames.shape[1] - 1)


def frame_variance(frame) -> float:
    return float(np.var(np.asarray(frame, dtype=np.float64), ddof=1))


def variance_frames(frames: np.ndarray) -> np.ndarray:
    return np.var(frames, axis=1, ddof=1)


def hilbert_stats(w: Waveform, grid: FrameGrid) -> np.ndarray:
    """Per-frame envelope variance and dynamic range (dB), shape ``(n_frames, 2)``.

    The envelope is computed once over the whole utterance and then framed.
    The dynamic range is ``20 log10(max / min)`` with the minimum floored at
    ``eps * max``; an all-zero frame has range 0.
    """
    env = frame_signal(hilbert_envelope(w.samples), grid)
    var = np.var(env, axis=1)
    hi = env.max(axis=1)
    lo = np.maximum(env.min(axis=1), np.finfo(float).eps * hi)
    dr = np.zeros_like(hi)
    ok = hi > 0
    dr[ok] = 20.0 * np.log10(hi[ok] / lo[ok])
    return np.column_stack([var, dr])
