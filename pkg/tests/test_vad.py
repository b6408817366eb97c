import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nira.dsp import FrameGrid, Waveform
from nira.errors import NoActivity
from nira.synth import speech_like
from nira.vad import MARGIN_DB, active_level_p56, speech_frame_mask

FS = 16000
GRID = FrameGrid()


def _rms_db(x):
    return 10 * np.log10(np.mean(x * x))


def test_sinusoid_level_matches_rms():
    t = np.arange(FS) / FS
    x = np.sin(2 * np.pi * 500 * t)
    level, activity = active_level_p56(Waveform(x))
    assert level == pytest.approx(_rms_db(x), abs=0.2)
    assert level >= _rms_db(x) - 1e-9
    assert activity == pytest.approx(1.0, abs=0.05)


def test_silence_raises():
    with pytest.raises(NoActivity):
        active_level_p56(Waveform(np.zeros(FS)))
    with pytest.raises(NoActivity):
        speech_frame_mask(Waveform(np.zeros(FS)), GRID)


def test_gated_noise_level_and_activity():
    rng = np.random.default_rng(0)
    burst = 4 * FS
    x = np.zeros(8 * burst)
    for k in range(0, 8, 2):
        x[k * burst : (k + 1) * burst] = 0.1 * rng.standard_normal(burst)
    burst_level = _rms_db(x[x != 0])
    level, activity = active_level_p56(Waveform(x))
    assert level == pytest.approx(burst_level, abs=0.5)
    assert activity == pytest.approx(0.5, abs=0.05)


def test_stationary_tone_all_frames_active():
    t = np.arange(FS) / FS
    mask = speech_frame_mask(Waveform(0.3 * np.sin(2 * np.pi * 300 * t)), GRID)
    assert mask.active.all()
    assert mask.activity_factor == 1.0


def test_burst_then_silence():
    rng = np.random.default_rng(1)
    x = np.zeros(2 * FS)
    x[:FS] = speech_like(1.0, rng).samples
    x[:FS] += 0.05 * rng.standard_normal(FS)
    mask = speech_frame_mask(Waveform(x), GRID)
    n = mask.active.size
    # frames entirely inside the silent half
    first_silent = FS // GRID.hop
    assert not mask.active[first_silent:].any()
    assert mask.active[: first_silent - 1].mean() > 0.5
    assert mask.activity_factor == pytest.approx(np.count_nonzero(mask.active) / n)


def test_mask_rule_is_margin_below_level():
    rng = np.random.default_rng(2)
    w = speech_like(3.0, rng)
    mask = speech_frame_mask(w, GRID)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, 320)[::160][: mask.active.size]
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(np.mean(frames**2, axis=1))
    np.testing.assert_array_equal(mask.active, db >= mask.active_level_db - MARGIN_DB)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 50.0))
def test_gain_invariance(gain):
    w = speech_like(2.0, np.random.default_rng(3))
    base = speech_frame_mask(w, GRID)
    scaled = speech_frame_mask(Waveform(w.samples * gain), GRID)
    assert scaled.active_level_db - base.active_level_db == pytest.approx(20 * np.log10(gain), abs=1e-9)
    np.testing.assert_array_equal(scaled.active, base.active)


def test_deterministic():
    w = speech_like(2.0, np.random.default_rng(4))
    a, b = speech_frame_mask(w, GRID), speech_frame_mask(w, GRID)
    np.testing.assert_array_equal(a.active, b.active)
    assert a.active_level_db == b.active_level_db
