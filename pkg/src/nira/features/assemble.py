"""Assemble the 134-column per-frame feature matrix of an utterance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..dsp import FrameGrid, Waveform, delta, frame_signal, normalize_peak
from ..errors import AllZeroSignal, NoActivity, TooFewSpeechFrames
from ..vad import MIN_ACTIVE_FRAMES, speech_frame_mask
from .isnr import isnr_from_power
from .lsf import LPC_ORDER, lsf_features
from .modulation import modulation_features
from .pitch import pitch_pefac
from .scattering import N_FIRST, N_SECOND, scattering_features
from .spectral import mfcc_from_power, normalize_columns, pld_descriptors, pld_from_power, power_spectrogram
from .temporal import hilbert_stats, variance_frames, zcr_frames

log = logging.getLogger(__name__)

FEATURE_BUDGET = {
    "lsf": 2 * LPC_ORDER,
    "zcr": 2,
    "variance": 2,
    "pitch": 2,
    "isnr": 2,
    "hilbert": 4,
    "pld": 6,
    "mfcc": 36,
    "modulation": 12,
    "scattering": N_FIRST + N_SECOND,
}
N_FEATURES = 134
assert sum(FEATURE_BUDGET.values()) == N_FEATURES, FEATURE_BUDGET


def _column_names() -> list[str]:
    names = [f"lsf_{i}" for i in range(1, 21)] + [f"d_lsf_{i}" for i in range(1, 21)]
    names += ["zcr", "d_zcr", "variance", "d_variance", "pitch_period_ms", "d_pitch_period_ms",
              "isnr_db", "d_isnr_db"]
    names += ["henv_var", "henv_range_db", "d_henv_var", "d_henv_range_db"]
    pld = ["pld_centroid", "pld_dynamics", "pld_flatness"]
    names += pld + [f"d_{n}" for n in pld]
    names += [f"mfcc_{i}" for i in range(1, 13)]
    names += [f"d_mfcc_{i}" for i in range(1, 13)]
    names += [f"dd_mfcc_{i}" for i in range(1, 13)]
    names += [f"mod_{band}_{m}" for band in ("peak", "adj1", "adj2")
              for m in ("mean", "var", "m3", "m4")]
    names += [f"scat1_{i}" for i in range(1, N_FIRST + 1)]
    names += [f"scat2_{i}" for i in range(1, N_SECOND + 1)]
    return names


COLUMN_NAMES = tuple(_column_names())
assert len(COLUMN_NAMES) == N_FEATURES
MFCC_COLUMNS = slice(COLUMN_NAMES.index("mfcc_1"), COLUMN_NAMES.index("mfcc_12") + 1)
LSF_COLUMNS = slice(0, LPC_ORDER)


@dataclass
class FeatureMatrix:
    values: np.ndarray
    utterance_id: str = ""
    frame_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    column_names: tuple = COLUMN_NAMES

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.column_names):
            raise ValueError(f"feature matrix must have {len(self.column_names)} columns")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def frame_features(w: Waveform, grid: FrameGrid):
    """All per-frame features over every frame, before masking.

    Returns ``(matrix, degenerate)`` where ``matrix`` has 134 columns with the
    MFCC block still un-normalised.
    """
    raw = frame_signal(w.samples, grid)
    tapered = raw * grid.taper()
    power = power_spectrogram(tapered)
    fs = w.sample_rate

    lsf, degenerate = lsf_features(tapered)
    zc = zcr_frames(raw)
    var = variance_frames(raw)
    period, _ = pitch_pefac(w, grid)
    snr = isnr_from_power(power, fs)
    henv = hilbert_stats(w, grid)
    pld = pld_descriptors(pld_from_power(power, fs))
    cep = mfcc_from_power(power, fs, floor=1e-10 * max(float(np.mean(power)), 1e-300))
    mod, _ = modulation_features(power, fs / grid.hop, fs)
    scat = scattering_features(w, grid)

    def with_delta(x):
        x = x.reshape(x.shape[0], -1)
        return np.concatenate([x, delta(x)], axis=1)

    blocks = [
        with_delta(lsf),
        with_delta(zc),
        with_delta(var),
        with_delta(period),
        with_delta(snr),
        with_delta(henv),
        with_delta(pld),
        cep,
        delta(cep),
        delta(delta(cep)),
        mod,
        scat,
    ]
    return np.concatenate(blocks, axis=1), degenerate


def assemble_feature_matrix(w: Waveform, utterance_id: str = "", grid: FrameGrid | None = None,
                            min_frames: int = MIN_ACTIVE_FRAMES) -> FeatureMatrix:
    """Normalise, mask and extract the feature matrix of one utterance.

    Deltas are taken over the full frame sequence; non-speech and degenerate
    frames are dropped afterwards, and the 12 static MFCC columns are then
    mean/variance normalised over the kept frames.
    """
    grid = grid or FrameGrid.for_rate(w.sample_rate)
    try:
        w = normalize_peak(w)
        mask = speech_frame_mask(w, grid)
    except (AllZeroSignal, NoActivity) as exc:
        raise TooFewSpeechFrames(f"{utterance_id}: no speech activity ({exc})") from exc
    feats, degenerate = frame_features(w, grid)
    keep = mask.active & ~degenerate
    if np.count_nonzero(keep) < min_frames:
        raise TooFewSpeechFrames(
            f"{utterance_id}: {np.count_nonzero(keep)} speech frames, need {min_frames}"
        )
    values = feats[keep]
    values[:, MFCC_COLUMNS] = normalize_columns(values[:, MFCC_COLUMNS])
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"{utterance_id}: non-finite feature values")
    times = grid.centers(w.samples.size, w.sample_rate)[keep]
    return FeatureMatrix(values, utterance_id, times)
