import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import solve_toeplitz

from nira.dsp import (
    FrameGrid,
    Waveform,
    autocorrelation,
    delta,
    frame_signal,
    hilbert_envelope,
    levinson_durbin,
    lpc_autocorrelation,
    lpc_frames,
    normalize_peak,
)
from nira.errors import AllZeroSignal, DegenerateFrame, SignalTooShort

GRID = FrameGrid()


def test_grid_for_16k():
    g = FrameGrid.for_rate(16000)
    assert (g.frame_length, g.hop) == (320, 160)


def test_normalize_peak_scales():
    out = normalize_peak(Waveform(np.array([0.5, -0.25])))
    np.testing.assert_array_equal(out.samples, [1.0, -0.5])


def test_normalize_peak_identity():
    out = normalize_peak(Waveform(np.array([1.0, 0.0])))
    np.testing.assert_array_equal(out.samples, [1.0, 0.0])


def test_normalize_peak_quiet_file():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(16000)
    x *= 0.031 / np.max(np.abs(x))
    out = normalize_peak(Waveform(x))
    assert max(abs(v) for v in out.samples.tolist()) == 1.0


def test_normalize_peak_all_zero():
    with pytest.raises(AllZeroSignal):
        normalize_peak(Waveform(np.zeros(100)))


def test_waveform_rejects_nonfinite():
    with pytest.raises(ValueError):
        Waveform(np.array([0.0, np.nan]))


def test_frame_count_480():
    frames = frame_signal(np.zeros(480), GRID)
    assert frames.shape == (2, 320)


def test_frame_too_short():
    with pytest.raises(SignalTooShort):
        frame_signal(np.zeros(319), GRID)


def test_frame_start_of_ramp():
    frames = frame_signal(np.arange(640.0), GRID)
    assert frames[1, 0] == 160.0


def test_windowed_view_applies_taper():
    x = np.ones(800)
    raw = frame_signal(x, GRID)
    tapered = frame_signal(x, GRID, windowed=True)
    np.testing.assert_allclose(tapered, raw * np.hamming(320))


@given(st.integers(min_value=320, max_value=5000))
def test_framing_tiling(n):
    frames = frame_signal(np.arange(n, dtype=float), GRID)
    assert frames.shape[0] == (n - 320) // 160 + 1
    np.testing.assert_array_equal(frames[:, 0], np.arange(frames.shape[0]) * 160)


def test_lpc_ar1_matches_normal_equations():
    rng = np.random.default_rng(1)
    e = rng.standard_normal(20000)
    x = np.zeros_like(e)
    for n in range(1, x.size):
        x[n] = 0.9 * x[n - 1] + e[n]
    a, err = lpc_autocorrelation(x, 1)
    assert abs(a[1] + 0.9) < 0.05
    r = autocorrelation(x, 1)[0]
    assert a[1] == pytest.approx(-r[1] / r[0], rel=1e-12)
    assert err >= 0


def test_lpc_white_noise_order2():
    x = np.random.default_rng(2).standard_normal(20000)
    a, _ = lpc_autocorrelation(x, 2)
    assert np.all(np.abs(a[1:]) < 0.05)


def test_lpc_zero_frame():
    with pytest.raises(DegenerateFrame):
        lpc_autocorrelation(np.zeros(320), 4)


def test_levinson_matches_toeplitz_solve():
    rng = np.random.default_rng(3)
    for _ in range(20):
        frame = rng.standard_normal(320) * np.hamming(320)
        r = autocorrelation(frame, 20)[0]
        a, _, _ = levinson_durbin(r, 20)
        oracle = solve_toeplitz(r[:20], -r[1:21])
        np.testing.assert_allclose(a[1:], oracle, rtol=1e-8, atol=1e-10)


def test_levinson_error_monotone_and_reflection_bounded():
    rng = np.random.default_rng(4)
    frames = rng.standard_normal((100, 320)).cumsum(axis=1) * np.hamming(320)
    r = autocorrelation(frames, 20)
    errs = np.stack([levinson_durbin(r, p)[1] for p in range(1, 21)], axis=1)
    assert np.all(np.diff(errs, axis=1) <= 1e-12 * errs[:, :1])
    _, _, k = levinson_durbin(r, 20)
    assert np.all(np.abs(k) <= 1.0)


def test_lpc_frames_flags_degenerate_rows():
    frames = np.random.default_rng(5).standard_normal((3, 320))
    frames[1] = 0.0
    a, degenerate = lpc_frames(frames, 10)
    assert degenerate.tolist() == [False, True, False]
    np.testing.assert_array_equal(a[1, 1:], 0.0)


def test_hilbert_cosine_envelope():
    fs, amp = 16000, 0.7
    t = np.arange(fs) / fs
    x = amp * np.cos(2 * np.pi * 440 * t)
    quadrature = amp * np.sin(2 * np.pi * 440 * t)
    oracle = np.hypot(x, quadrature)
    env = hilbert_envelope(x)
    edge = int(0.05 * x.size)
    np.testing.assert_allclose(env[edge:-edge], oracle[edge:-edge], rtol=0.01)


def test_hilbert_am_tone():
    fs = 16000
    t = np.arange(fs) / fs
    m = 1 + 0.5 * np.cos(2 * np.pi * 4 * t)
    env = hilbert_envelope(m * np.cos(2 * np.pi * 1000 * t))
    edge = int(0.05 * t.size)
    np.testing.assert_allclose(env[edge:-edge], m[edge:-edge], rtol=0.02)


def test_hilbert_zero_and_sign():
    assert np.all(hilbert_envelope(np.zeros(64)) == 0)
    x = np.random.default_rng(6).standard_normal(500)
    np.testing.assert_allclose(hilbert_envelope(x), hilbert_envelope(-x))
    env = hilbert_envelope(x)
    assert np.all(env[10:-10] >= np.abs(x[10:-10]) - 1e-9)


def _delta_oracle(x, span):
    n = len(x)
    out = []
    for t in range(n):
        num = 0.0
        for k in range(1, span + 1):
            num += k * (x[min(t + k, n - 1)] - x[max(t - k, 0)])
        out.append(num / (2 * sum(k * k for k in range(1, span + 1))))
    return np.array(out)


def test_delta_examples():
    np.testing.assert_array_equal(delta(np.full(7, 3.0)), 0.0)
    ramp = delta(np.arange(10.0), span=2)
    np.testing.assert_allclose(ramp[2:-2], 1.0)
    sq = delta(np.array([0, 1, 4, 9, 16.0]), span=1)
    np.testing.assert_allclose(sq[1:-1], [2, 4, 6])


@settings(max_examples=50)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e3, 1e3)), st.integers(1, 3))
def test_delta_matches_loop_oracle(x, span):
    np.testing.assert_allclose(delta(x, span), _delta_oracle(x, span), atol=1e-9)


@settings(max_examples=50)
@given(arrays(np.float64, (12, 3), elements=st.floats(-100, 100)),
       arrays(np.float64, (12, 3), elements=st.floats(-100, 100)),
       st.floats(-5, 5), st.floats(-5, 5))
def test_delta_linear(x, y, a, b):
    np.testing.assert_allclose(delta(a * x + b * y), a * delta(x) + b * delta(y), atol=1e-8)
