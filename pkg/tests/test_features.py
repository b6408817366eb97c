import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import sawtooth

from nira.dsp import FrameGrid, Waveform, frame_signal
from nira.errors import FormatError, TooFewSpeechFrames
from nira.features.assemble import (
    COLUMN_NAMES,
    FEATURE_BUDGET,
    LSF_COLUMNS,
    MFCC_COLUMNS,
    N_FEATURES,
    assemble_feature_matrix,
    frame_features,
)
from nira.features.io import dumps_features, export_csv, load_features, loads_features, save_features
from nira.features.isnr import isnr
from nira.features.lsf import lsf_from_lpc
from nira.features.modulation import neighbour_bands, modulation_features_from_wave
from nira.features.pitch import pitch_pefac
from nira.features.scattering import LOG_FLOOR, first_order_centres, scattering_features
from nira.features.spectral import (
    N_MEL,
    ltass_db,
    mel_filterbank,
    mfcc,
    normalize_columns,
    pld_descriptors,
    pld_features,
    pld_from_power,
    power_spectrogram,
)
from nira.features.temporal import frame_variance, hilbert_stats, zcr
from nira.synth import fan_noise, speech_like, white_noise
from nira.vad import speech_frame_mask

FS = 16000
GRID = FrameGrid()
T1 = np.arange(FS) / FS


def test_budget_sums_to_134():
    assert sum(FEATURE_BUDGET.values()) == N_FEATURES == 134
    assert len(set(COLUMN_NAMES)) == 134


# ---------------------------------------------------------------- LSF

def _lsf_oracle(a):
    a = np.asarray(a, dtype=float)
    ext = np.r_[a, 0.0]
    angles = []
    for poly in (ext + ext[::-1], ext - ext[::-1]):
        roots = np.roots(poly[::-1][::-1])
        ang = np.angle(roots)
        angles += [v for v in ang if 1e-6 < v < np.pi - 1e-6]
    return np.sort(angles)


def test_lsf_trivial_predictor_uniform():
    a = np.zeros(21)
    a[0] = 1.0
    np.testing.assert_allclose(lsf_from_lpc(a), np.arange(1, 21) * np.pi / 21, atol=1e-10)


def test_lsf_order2_brackets_resonance():
    lsf = lsf_from_lpc([1.0, -1.2, 0.81])
    np.testing.assert_allclose(lsf, _lsf_oracle([1.0, -1.2, 0.81]), atol=1e-10)
    res = np.arccos(1.2 / (2 * 0.9))
    assert lsf[0] < res < lsf[1]


def _step_up(k):
    a = np.array([1.0])
    for ki in k:
        ext = np.r_[a, 0.0]
        a = ext + ki * ext[::-1]
    return a


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-0.95, 0.95), min_size=2, max_size=20).filter(lambda k: len(k) % 2 == 0))
def test_lsf_stable_predictor_ascending(k):
    a = _step_up(k)
    lsf = lsf_from_lpc(a)
    assert np.all(lsf > 0) and np.all(lsf < np.pi)
    assert np.all(np.diff(lsf) > 0)
    np.testing.assert_allclose(lsf, _lsf_oracle(a), atol=1e-6)


# ---------------------------------------------------------------- ZCR / variance

def test_zcr_examples():
    assert zcr(np.tile([1.0, -1.0], 160)) == 1.0
    assert zcr(np.full(320, 0.3)) == 0.0


def test_zcr_sinusoid():
    f = 440.0
    x = np.sin(2 * np.pi * f * np.arange(320) / FS + 0.1)
    crossings = np.count_nonzero(np.diff(np.signbit(x)))
    assert zcr(x) == pytest.approx(crossings / 319)
    assert abs(zcr(x) * 319 - 2 * f * 320 / FS) <= 1


def test_variance_examples():
    assert frame_variance(np.full(320, 2.0)) == 0.0
    assert frame_variance(np.tile([1.0, -1.0], 160)) == pytest.approx(320 / 319)
    v = frame_variance(np.random.default_rng(0).standard_normal(320))
    assert 0.7 <= v <= 1.3


# ---------------------------------------------------------------- pitch

def _voiced_median(period, voiced):
    assert voiced.mean() > 0.5
    return np.median(period[voiced])


def test_pitch_pulse_train():
    x = np.zeros(2 * FS)
    x[:: FS // 100] = 1.0
    x += 0.01 * np.random.default_rng(1).standard_normal(x.size)
    period, voiced = pitch_pefac(Waveform(x), GRID)
    assert _voiced_median(period, voiced.astype(bool)) == pytest.approx(10.0, rel=0.05)


def test_pitch_sawtooth():
    t = np.arange(2 * FS) / FS
    period, voiced = pitch_pefac(Waveform(sawtooth(2 * np.pi * 200 * t)), GRID)
    assert _voiced_median(period, voiced.astype(bool)) == pytest.approx(5.0, rel=0.05)


def test_pitch_white_noise_unvoiced():
    _, voiced = pitch_pefac(white_noise(2.0, np.random.default_rng(2)), GRID)
    assert np.mean(voiced) < 0.2


def test_pitch_always_in_range():
    period, _ = pitch_pefac(speech_like(2.0, np.random.default_rng(3)), GRID)
    assert np.all((period >= 1000 / 400 - 1e-9) & (period <= 1000 / 50 + 1e-9))


# ---------------------------------------------------------------- iSNR

def test_isnr_clean_speech_high():
    w = speech_like(4.0, np.random.default_rng(4))
    mask = speech_frame_mask(w, GRID)
    assert np.median(isnr(w, GRID)[mask.active]) >= 30


def test_isnr_zero_db_white_noise():
    rng = np.random.default_rng(5)
    clean = speech_like(6.0, rng)
    mask = speech_frame_mask(clean, GRID)
    noise = rng.standard_normal(clean.samples.size)
    active = frame_signal(clean.samples, GRID)[mask.active]
    speech_power = np.mean(active**2)
    noise *= np.sqrt(speech_power / np.mean(noise**2))
    values = isnr(Waveform(clean.samples + noise), GRID)
    assert abs(np.median(values[mask.active])) <= 6


@pytest.mark.parametrize("make", [white_noise, fan_noise])
def test_isnr_stationary_noise_low(make):
    values = isnr(make(4.0, np.random.default_rng(6)), GRID)
    assert np.max(values) <= 3


# ---------------------------------------------------------------- Hilbert statistics

def test_hilbert_stats_flat_tone():
    stats = hilbert_stats(Waveform(0.5 * np.sin(2 * np.pi * 1000 * T1)), GRID)
    interior = stats[5:-5]
    assert np.max(interior[:, 0]) < 1e-6
    assert np.max(interior[:, 1]) < 0.1


def test_hilbert_stats_am_range():
    env = 1 + 0.5 * np.cos(2 * np.pi * 50 * T1)
    stats = hilbert_stats(Waveform(env * np.cos(2 * np.pi * 2000 * T1)), GRID)
    np.testing.assert_allclose(stats[5:-5, 1], 20 * np.log10(1.5 / 0.5), atol=1.0)


# ---------------------------------------------------------------- PLD

def _ltass_power(nfft=512):
    return 10 ** (ltass_db(FS, nfft) / 10)


def test_pld_ltass_frame_is_flat():
    pld = pld_from_power(_ltass_power()[None, :])
    np.testing.assert_allclose(pld, 0.0, atol=1e-9)
    centroid, dyn, flat = pld_descriptors(pld)[0]
    nb = pld.shape[1]
    assert flat == pytest.approx(1.0)
    assert centroid == pytest.approx(np.mean(np.arange(1, nb + 1) / nb))
    assert dyn == 0.0


def test_pld_tone_centroid_and_flatness():
    rng = np.random.default_rng(7)
    base = _ltass_power() * (1 + 0.1 * rng.random(257))
    tone_bin = 96
    tone = base.copy()
    tone[tone_bin] *= 1e6
    feats = [pld_features(p) for p in (base, tone, _ltass_power())]
    nb = 256
    assert feats[1][0] == pytest.approx(tone_bin / nb, abs=0.02)
    assert feats[1][2] == min(f[2] for f in feats)


def test_pld_identical_frames_zero_dynamics():
    p = np.tile(_ltass_power() * 3.0, (2, 1))
    assert pld_descriptors(pld_from_power(p))[1, 1] == 0.0


# ---------------------------------------------------------------- MFCC

def test_mfcc_gain_only_moves_c0():
    frame = speech_like(0.5, np.random.default_rng(8)).samples[2000:2320] * np.hamming(320)
    np.testing.assert_allclose(mfcc(frame), mfcc(7.3 * frame), atol=1e-9)


def test_mfcc_tilt():
    rng = np.random.default_rng(9)
    noise = rng.standard_normal(320) * np.hamming(320)
    tilted = np.cumsum(rng.standard_normal(320)) * np.hamming(320)
    slope = [np.polyfit(np.arange(1, 257), 10 * np.log10(power_spectrogram(x[None])[0, 1:]), 1)[0]
             for x in (noise, tilted)]
    assert slope[1] < slope[0]
    assert mfcc(tilted)[0] > mfcc(noise)[0]


def test_normalize_columns():
    x = np.random.default_rng(10).normal(3, 2, (50, 4))
    x[:, 2] = 5.0
    z = normalize_columns(x)
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(z[:, [0, 1, 3]].var(0), 1, atol=1e-12)
    np.testing.assert_array_equal(z[:, 2], 0.0)


# ---------------------------------------------------------------- modulation

def _mel_band_of(freq):
    fb = mel_filterbank(FS, 512, 23)
    return int(np.argmax(fb[:, int(round(freq * 512 / FS))]))


def test_modulation_am_tone():
    carrier = 1500.0
    x = (1 + 0.8 * np.cos(2 * np.pi * 8 * T1)) * np.sin(2 * np.pi * carrier * T1)
    feats, dominant = modulation_features_from_wave(Waveform(np.tile(x, 2)), GRID)
    interior = slice(20, -20)
    assert np.all(dominant[interior] == _mel_band_of(carrier))
    assert np.median(feats[interior, 0]) == pytest.approx(8.0, abs=100 / 128)


def test_modulation_stationary_tone():
    feats, _ = modulation_features_from_wave(Waveform(np.sin(2 * np.pi * 1000 * T1)), GRID)
    native_bin = 100 / 25
    assert np.median(feats[:, 0]) < native_bin
    assert np.median(np.sqrt(feats[:, 1])) < native_bin
    assert np.all(feats[:, [1, 3, 5, 7, 9, 11]] >= 0)


def test_modulation_edge_policy():
    np.testing.assert_array_equal(neighbour_bands(np.array([0, 5, 22])), [[1, 2], [4, 6], [20, 21]])


# ---------------------------------------------------------------- scattering

def test_scattering_zero_signal_floor():
    s = scattering_features(Waveform(np.zeros(FS // 2)), GRID)
    assert s.shape[1] == 28
    np.testing.assert_allclose(s, np.log(LOG_FLOOR))


def test_scattering_gain_shift():
    w = speech_like(1.0, np.random.default_rng(11))
    a = scattering_features(w, GRID)[:, :20]
    b = scattering_features(Waveform(3.0 * w.samples), GRID)[:, :20]
    loud = a > np.log(LOG_FLOOR) + 10
    np.testing.assert_allclose((b - a)[loud], np.log(3.0), atol=1e-4)


@pytest.mark.parametrize("freq", [300.0, 1000.0, 3000.0])
def test_scattering_tone_band(freq):
    s = scattering_features(Waveform(np.sin(2 * np.pi * freq * T1)), GRID)[10:-10, :20]
    expected = int(np.argmin(np.abs(np.log(first_order_centres() / freq))))
    assert np.all(np.argmax(s, axis=1) == expected)


# ---------------------------------------------------------------- assembly

def test_assemble_speech():
    w = speech_like(3.0, np.random.default_rng(12))
    fm = assemble_feature_matrix(w, "utt")
    mask = speech_frame_mask(w, GRID)
    assert fm.values.shape[1] == 134
    assert fm.n_frames <= mask.n_active and fm.n_frames >= 10
    assert np.all(np.isfinite(fm.values))
    z = fm.values[:, MFCC_COLUMNS]
    np.testing.assert_allclose(z.mean(0), 0, atol=1e-9)
    np.testing.assert_allclose(z.var(0), 1, atol=1e-9)
    assert np.all(np.diff(fm.values[:, LSF_COLUMNS], axis=1) > 0)
    assert np.all(fm.frame_times[1:] > fm.frame_times[:-1])


def test_assemble_silence():
    with pytest.raises(TooFewSpeechFrames):
        assemble_feature_matrix(Waveform(np.zeros(3 * FS)))


def test_assemble_deterministic():
    w = speech_like(2.0, np.random.default_rng(13))
    a = assemble_feature_matrix(w, "x").values.tobytes()
    b = assemble_feature_matrix(w, "x").values.tobytes()
    assert a == b


def test_frame_features_gain_behaviour():
    w = speech_like(2.0, np.random.default_rng(14))
    gain = 10 ** (6 / 20)
    a, _ = frame_features(w, GRID)
    b, _ = frame_features(Waveform(gain * w.samples), GRID)
    keep = speech_frame_mask(w, GRID).active
    a, b = a[keep], b[keep]
    np.testing.assert_allclose(b[:, LSF_COLUMNS], a[:, LSF_COLUMNS], atol=1e-6)
    np.testing.assert_allclose(normalize_columns(b[:, MFCC_COLUMNS]), normalize_columns(a[:, MFCC_COLUMNS]),
                               atol=1e-6)
    var = COLUMN_NAMES.index("variance")
    np.testing.assert_allclose(b[:, var], gain**2 * a[:, var], rtol=1e-9)
    snr = COLUMN_NAMES.index("isnr_db")
    np.testing.assert_allclose(b[:, snr], a[:, snr], atol=1e-6)


def test_feature_file_roundtrip(tmp_path):
    fm = assemble_feature_matrix(speech_like(2.0, np.random.default_rng(15)), "utt-1")
    path = tmp_path / "f.feat"
    save_features(path, fm, {"seed": 3})
    back, meta = load_features(path)
    assert back.values.tobytes() == fm.values.tobytes()
    assert back.utterance_id == "utt-1" and meta == {"seed": 3}
    assert back.column_names == COLUMN_NAMES
    data = dumps_features(fm)
    with pytest.raises(FormatError):
        loads_features(b"XXXXXXXX" + data[8:])
    with pytest.raises(FormatError):
        loads_features(data[:-3])
    export_csv(tmp_path / "f.csv", fm)
    lines = (tmp_path / "f.csv").read_text().splitlines()
    assert len(lines) == fm.n_frames + 1 and lines[0].startswith("time_s,lsf_1")


def test_mel_filterbank_shape():
    assert mel_filterbank().shape == (N_MEL, 257)
