"""Shared DSP kernels: framing, linear prediction, envelopes and deltas."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .errors import AllZeroSignal, DegenerateFrame, SignalTooShort

SAMPLE_RATE = 16000
FRAME_MS = 20.0
DELTA_SPAN = 2


@dataclass(frozen=True)
class Waveform:
    """Mono waveform with its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(x)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class FrameGrid:
    """20 ms frames with 50 % overlap, i.e. one frame every 10 ms."""

    frame_length: int = 320
    hop: int = 160
    window: str = "hamming"

    @classmethod
    def for_rate(cls, sample_rate: int, frame_ms: float = FRAME_MS) -> "FrameGrid":
        n = int(round(sample_rate * frame_ms / 1000.0))
        return cls(frame_length=n, hop=n // 2)

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.frame_length:
            raise SignalTooShort(
                f"{n_samples} samples is shorter than one frame ({self.frame_length})"
            )
        return (n_samples - self.frame_length) // self.hop + 1

    def starts(self, n_samples: int) -> np.ndarray:
        return np.arange(self.n_frames(n_samples)) * self.hop

    def centers(self, n_samples: int, sample_rate: int) -> np.ndarray:
        """Frame centre times in seconds."""
        return (self.starts(n_samples) + self.frame_length / 2) / sample_rate

    def taper(self) -> np.ndarray:
        return sps.get_window(self.window, self.frame_length, fftbins=False)


def normalize_peak(w: Waveform) -> Waveform:
    """Scale ``w`` so that its largest absolute sample equals one."""
    if w.samples.size == 0:
        raise AllZeroSignal("empty waveform")
    peak = np.max(np.abs(w.samples))
    if peak == 0:
        raise AllZeroSignal("cannot peak-normalize an all-zero waveform")
    return Waveform(w.samples / peak, w.sample_rate)


def frame_signal(x, grid: FrameGrid, windowed: bool = False) -> np.ndarray:
    """Cut ``x`` into an ``(n_frames, frame_length)`` matrix.

    Frame ``k`` starts at sample ``k * grid.hop``.  With ``windowed=True`` each
    row is multiplied by the grid taper (spectral view); otherwise the raw
    samples are returned (time-domain view).
    """
    if isinstance(x, Waveform):
        x = x.samples
    x = np.asarray(x, dtype=np.float64)
    n = grid.n_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(x, grid.frame_length)[:: grid.hop][:n]
    frames = np.array(frames)
    if windowed:
        frames *= grid.taper()
    return frames


def autocorrelation(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Biased autocorrelation for lags ``0..max_lag`` along the last axis."""
    frames = np.atleast_2d(frames)
    n = frames.shape[-1]
    nfft = 1 << int(np.ceil(np.log2(2 * n - 1)))
    spec = np.fft.rfft(frames, nfft, axis=-1)
    r = np.fft.irfft(spec.real**2 + spec.imag**2, nfft, axis=-1)
    return r[..., : max_lag + 1]


def levinson_durbin(r: np.ndarray, order: int):
    """Solve the Yule-Walker equations for each row of ``r``.

    Parameters
    ----------
    r : ndarray, shape (..., >= order + 1)
        Autocorrelation sequences, lag 0 first.
    order : int
        Predictor order.

    Returns
    -------
    a : ndarray, shape (..., order + 1)
        Inverse-filter coefficients with ``a[..., 0] == 1``, i.e.
        ``A(z) = 1 + a1 z^-1 + ... + ap z^-p``.
    err : ndarray, shape (...,)
        Final prediction error power.
    k : ndarray, shape (..., order)
        Reflection coefficients.

    Rows with ``r[0] == 0`` are returned with zero predictor coefficients and
    zero error; callers detect them through :func:`lpc_autocorrelation`.
    """
    r = np.asarray(r, dtype=np.float64)
    batch = r.shape[:-1]
    r = r.reshape(-1, r.shape[-1])
    m = r.shape[0]
    a = np.zeros((m, order + 1))
    a[:, 0] = 1.0
    k = np.zeros((m, order))
    err = r[:, 0].copy()
    ok = err > 0
    for i in range(1, order + 1):
        acc = r[:, i] + np.einsum("ij,ij->i", a[:, 1:i], r[:, i - 1 : 0 : -1]) if i > 1 else r[:, 1].copy()
        ki = np.zeros(m)
        np.divide(-acc, err, out=ki, where=ok & (err > 0))
        prev = a[:, 1:i].copy()
        a[:, 1:i] = prev + ki[:, None] * prev[:, ::-1]
        a[:, i] = ki
        k[:, i - 1] = ki
        err = err * (1.0 - ki * ki)
    return a.reshape(*batch, order + 1), err.reshape(batch), k.reshape(*batch, order)


def lpc_autocorrelation(frame, order: int):
    """Autocorrelation-method linear prediction of a single frame.

    Returns ``(a, err)`` where ``a`` holds ``[1, a1, ..., ap]``.  Raises
    :class:`DegenerateFrame` when the frame has no energy.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if order >= frame.size:
        raise ValueError("LPC order must be smaller than the frame length")
    r = autocorrelation(frame, order)[0]
    if r[0] <= 0:
        raise DegenerateFrame("zero-energy frame")
    a, err, _ = levinson_durbin(r, order)
    return a, float(err)


def lpc_frames(frames: np.ndarray, order: int):
    """Vectorised LPC over a frame matrix.

    Degenerate (zero-energy) rows get zero predictor coefficients; the second
    return value flags them.
    """
    r = autocorrelation(frames, order)
    degenerate = r[:, 0] <= 1e-20 * max(np.max(r[:, 0]), 1e-300)
    r = r.copy()
    r[degenerate] = 0.0
    a, err, _ = levinson_durbin(r, order)
    return a, degenerate


def hilbert_envelope(x) -> np.ndarray:
    """Magnitude of the analytic signal of ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise SignalTooShort("Hilbert envelope needs at least two samples")
    return np.abs(sps.hilbert(x))


def delta(seq, span: int = DELTA_SPAN) -> np.ndarray:
    """Regression-based rate of change along axis 0, edges replicated.

    ``d[t] = sum_k k (x[t+k] - x[t-k]) / (2 sum_k k^2)`` for ``k = 1..span``.
    """
    x = np.asarray(seq, dtype=np.float64)
    if x.shape[0] < 1:
        raise ValueError("delta needs at least one frame")
    pad = [(span, span)] + [(0, 0)] * (x.ndim - 1)
    xp = np.pad(x, pad, mode="edge")
    n = x.shape[0]
    out = np.zeros_like(x)
    for k in range(1, span + 1):
        out += k * (xp[span + k : span + k + n] - xp[span - k : span - k + n])
    return out / (2.0 * sum(k * k for k in range(1, span + 1)))
