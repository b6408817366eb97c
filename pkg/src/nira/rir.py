"""Room impulse responses: randomized image method and ground-truth labels."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform
from .errors import DecayRangeUnreachable, EmptyTail, InvalidGeometry

SPEED_OF_SOUND = 343.0
SINC_TAPS = 81
SINC_SPAN_S = 0.1
DEFAULT_JITTER = 0.1
EDC_FLOOR_DB = -300.0
FIT_RANGE_DB = (-5.0, -35.0)
DIRECT_HALF_WINDOW_S = 0.0025


@dataclass
class RoomSpec:
    """Shoebox room, source and microphone.

    ``absorption`` holds six energy absorption coefficients ordered
    ``(x=0, x=Lx, y=0, y=Ly, z=0, z=Lz)``; a scalar applies to every wall.
    ``length_s=None`` sizes the response from the Eyring reverberation time.
    """

    dimensions: tuple
    absorption: tuple
    source_pos: tuple
    mic_pos: tuple
    max_order: int | None = None
    jitter: float = DEFAULT_JITTER
    seed: int = 0
    length_s: float | None = None
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=float)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise InvalidGeometry(f"bad room dimensions {self.dimensions}")
        alpha = np.broadcast_to(np.asarray(self.absorption, dtype=float), (6,))
        if np.any(alpha <= 0) or np.any(alpha > 1):
            raise InvalidGeometry("absorption coefficients must lie in (0, 1]")
        for name in ("source_pos", "mic_pos"):
            p = np.asarray(getattr(self, name), dtype=float)
            if p.shape != (3,) or np.any(p <= 0) or np.any(p >= dims):
                raise InvalidGeometry(f"{name} {tuple(p)} is not strictly inside the room")
        if self.jitter < 0:
            raise InvalidGeometry("jitter must be non-negative")
        if self.max_order is not None and self.max_order < 0:
            raise InvalidGeometry("max_order must be non-negative")
        self.dimensions = tuple(float(v) for v in dims)
        self.absorption = tuple(float(v) for v in alpha)
        self.source_pos = tuple(float(v) for v in self.source_pos)
        self.mic_pos = tuple(float(v) for v in self.mic_pos)

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_pos, self.mic_pos)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.dimensions))

    @property
    def surface_areas(self) -> np.ndarray:
        lx, ly, lz = self.dimensions
        return np.array([ly * lz, ly * lz, lx * lz, lx * lz, lx * ly, lx * ly])

    def eyring_t60(self) -> float:
        s = self.surface_areas
        mean_alpha = float(np.sum(s * self.absorption) / s.sum())
        if mean_alpha >= 1:
            return 0.0
        return 0.161 * self.volume / (-s.sum() * math.log(1 - mean_alpha))


@dataclass
class RirRecord:
    rir: np.ndarray
    direct_index: int
    room: RoomSpec | None = None
    t60_s: float = float("nan")
    drr_db: float = float("nan")
    sample_rate: int = SAMPLE_RATE
    meta: dict = field(default_factory=dict)

    def labelled(self) -> "RirRecord":
        """Fill ``t60_s`` and ``drr_db`` from the ground-truth oracles."""
        self.t60_s = estimate_t60_from_rir(self.rir, self.sample_rate)
        self.drr_db = compute_drr_from_rir(self.rir, self.direct_index, self.sample_rate, on_empty="inf")
        return self


def _axis_images(src: float, length: float, n_max: int):
    """Image coordinates along one axis with reflection counts per wall."""
    n = np.arange(-n_max, n_max + 1)
    pos, lo, hi = [], [], []
    for q in (0, 1):
        pos.append((1 - 2 * q) * src + 2 * n * length)
        lo.append(np.abs(n - q))
        hi.append(np.abs(n))
    return np.concatenate(pos), np.concatenate(lo), np.concatenate(hi)


def _fractional_kernel(frac: np.ndarray) -> np.ndarray:
    half = SINC_TAPS // 2
    k = np.arange(-half, half + 1)
    t = k[None, :] - frac[:, None]
    win = 0.5 * (1 + np.cos(np.pi * t / (half + 1)))
    return np.sinc(t) * win


def simulate_rir(room: RoomSpec) -> RirRecord:
    """Randomized image method RIR (labels not yet filled).

    Every image source except the direct path is displaced by a uniform
    random offset in ``[-jitter, jitter]^3`` drawn from ``seed``.  Image
    amplitudes are the product of the wall reflection coefficients over
    ``4 pi d``.  Arrivals within ``SINC_SPAN_S`` of the direct sound use an
    81-tap Hann-windowed sinc fractional delay; later ones are rounded to the
    nearest sample.
    """
    fs = room.sample_rate
    c = SPEED_OF_SOUND
    dims = np.array(room.dimensions)
    src = np.array(room.source_pos)
    mic = np.array(room.mic_pos)
    # pressure-release sign convention keeps the low-frequency build-up bounded
    beta = -np.sqrt(1.0 - np.array(room.absorption))

    length_s = room.length_s
    if length_s is None:
        length_s = max(1.3 * room.eyring_t60(), 0.2) + room.distance / c + 0.05
    n_samples = int(math.ceil(length_s * fs))
    max_dist = length_s * c
    rng = np.random.default_rng(room.seed)

    half = SINC_TAPS // 2
    h = np.zeros(n_samples + 2 * half + 1)
    d0 = room.distance
    direct_delay = d0 / c * fs
    sinc_limit = direct_delay + SINC_SPAN_S * fs

    axes = [_axis_images(src[i], dims[i], int(math.ceil(max_dist / (2 * dims[i]))) + 1) for i in range(3)]
    (xp, xlo, xhi), (yp, ylo, yhi), (zp, zlo, zhi) = axes
    log_b = np.log(np.abs(beta) + 1e-300)
    neg = beta < 0
    yz_order = ylo[:, None] + yhi[:, None] + zlo[None, :] + zhi[None, :]
    yz_logamp = (ylo[:, None] * log_b[2] + yhi[:, None] * log_b[3]
                 + zlo[None, :] * log_b[4] + zhi[None, :] * log_b[5])
    yz_sign = (ylo[:, None] * neg[2] + yhi[:, None] * neg[3]
               + zlo[None, :] * neg[4] + zhi[None, :] * neg[5])
    dy2 = (yp[:, None] - mic[1]) ** 2
    dz2 = (zp[None, :] - mic[2]) ** 2

    fine_delay, fine_amp = [], []
    for i in range(xp.size):
        order = xlo[i] + xhi[i] + yz_order
        jit = rng.uniform(-room.jitter, room.jitter, size=(3,) + order.shape) if room.jitter > 0 else None
        if jit is not None:
            jit[:, order == 0] = 0.0
            dist = np.sqrt((xp[i] + jit[0] - mic[0]) ** 2 + (yp[:, None] + jit[1] - mic[1]) ** 2
                           + (zp[None, :] + jit[2] - mic[2]) ** 2)
        else:
            dist = np.sqrt((xp[i] - mic[0]) ** 2 + dy2 + dz2)
        ok = dist < max_dist
        if room.max_order is not None:
            ok &= order <= room.max_order
        if all(b == 0 for b in beta):
            ok &= order == 0
        if not ok.any():
            continue
        logamp = xlo[i] * log_b[0] + xhi[i] * log_b[1] + yz_logamp
        sign = np.where((xlo[i] * neg[0] + xhi[i] * neg[1] + yz_sign) % 2 == 1, -1.0, 1.0)
        amp = (sign * np.exp(logamp) / (4 * np.pi * dist))[ok]
        delay = (dist[ok] / c) * fs
        amp = np.where(order[ok] == 0, 1.0 / (4 * np.pi * dist[ok]), amp)
        early = delay < sinc_limit
        if early.any():
            fine_delay.append(delay[early])
            fine_amp.append(amp[early])
        late = ~early
        if late.any():
            idx = np.rint(delay[late]).astype(int) + half
            h += np.bincount(idx, weights=amp[late], minlength=h.size)[: h.size]

    if fine_delay:
        delay = np.concatenate(fine_delay)
        amp = np.concatenate(fine_amp)
        base = np.rint(delay).astype(int)
        kern = _fractional_kernel(delay - base) * amp[:, None]
        idx = base[:, None] + np.arange(SINC_TAPS)[None, :]
        h += np.bincount(idx.ravel(), weights=kern.ravel(), minlength=h.size)[: h.size]

    rir = h[half : half + n_samples]
    direct_index = int(round(direct_delay))
    return RirRecord(rir=rir, direct_index=direct_index, room=room, sample_rate=fs,
                     meta={"generator": "image", "seed": room.seed})


def schroeder_edc(rir, floor_db: float = EDC_FLOOR_DB) -> np.ndarray:
    """Backward-integrated energy decay curve in dB, 0 dB at the first sample."""
    e = np.asarray(rir, dtype=np.float64) ** 2
    total = e.sum()
    if total <= 0:
        raise EmptyTail("zero-energy impulse response")
    tail = np.cumsum(e[::-1])[::-1] / total
    tail = np.minimum.accumulate(tail)  # guard against round-off increases
    with np.errstate(divide="ignore"):
        edc = 10 * np.log10(tail)
    edc[0] = 0.0
    return np.maximum(edc, floor_db)


def estimate_t60_from_rir(rir, sample_rate: int = SAMPLE_RATE, fit_range=FIT_RANGE_DB,
                          truncation_margin_db: float = 10.0) -> float:
    """T60 from a least-squares line through the EDC between -5 and -35 dB.

    The decay is rejected (:class:`DecayRangeUnreachable`) if the EDC never
    reaches the lower fit limit, or if the fitted line had not fallen at least
    ``truncation_margin_db`` below that limit by the end of the response, in
    which case the fit region is shaped by truncation rather than decay.
    """
    edc = schroeder_edc(rir)
    hi, lo = fit_range
    below_hi = np.nonzero(edc <= hi)[0]
    below_lo = np.nonzero(edc <= lo)[0]
    if below_lo.size == 0 or below_hi.size == 0:
        raise DecayRangeUnreachable(f"EDC never reaches {lo} dB")
    i0, i1 = below_hi[0], below_lo[0]
    if i1 - i0 < 2:
        raise DecayRangeUnreachable("fit range spans fewer than three samples")
    t = np.arange(i0, i1 + 1) / sample_rate
    slope, intercept = np.polyfit(t, edc[i0 : i1 + 1], 1)
    if slope >= 0:
        raise DecayRangeUnreachable("non-decaying EDC")
    end_level = slope * (len(edc) / sample_rate) + intercept
    if end_level > lo - truncation_margin_db:
        raise DecayRangeUnreachable(
            f"response ends {end_level:.1f} dB on the fitted decay; truncated before {lo} dB"
        )
    return float(-60.0 / slope)


def compute_drr_from_rir(rir, direct_index: int, sample_rate: int = SAMPLE_RATE,
                         half_window_s: float = DIRECT_HALF_WINDOW_S, on_empty: str = "raise") -> float:
    """Direct (index +- 2.5 ms) to remaining energy ratio in dB.

    With ``on_empty="inf"`` a response without reverberant energy yields
    ``+inf`` instead of raising :class:`EmptyTail`.
    """
    h = np.asarray(rir, dtype=np.float64)
    if not 0 <= direct_index < h.size:
        raise ValueError("direct_index outside the response")
    half = int(round(half_window_s * sample_rate))
    lo, hi = max(direct_index - half, 0), min(direct_index + half + 1, h.size)
    e = h * h
    direct = e[lo:hi].sum()
    rest = e.sum() - direct
    if rest <= 0:
        if on_empty == "inf":
            return float("inf")
        raise EmptyTail("no reverberant energy outside the direct window")
    return float(10 * np.log10(direct / rest))


def stochastic_rir(t60: float, drr_db: float, rng: np.random.Generator, fs: int = SAMPLE_RATE,
                   predelay_s: float | None = None) -> RirRecord:
    """Measured-style RIR: direct impulse, sparse early echoes, exponential noise tail.

    The tail decays faster at high frequencies (first-order low-pass whose
    pole moves with time), mimicking air and wall absorption.  ``drr_db`` is
    a target; the returned labels come from the oracles.
    """
    from scipy.signal import lfilter

    predelay = rng.uniform(0.002, 0.02) if predelay_s is None else predelay_s
    n = int(math.ceil((1.3 * t60 + predelay + 0.05) * fs))
    d = int(round(predelay * fs))
    t = np.arange(n) / fs
    alpha = 3 * math.log(10) / t60
    noise = rng.standard_normal(n)
    noise = lfilter([0.6], [1.0, -0.4], noise)
    tail = noise * np.exp(-alpha * np.maximum(t - predelay, 0))
    onset = int(round(0.001 * fs))
    tail[: d + onset] = 0.0
    n_echo = rng.integers(3, 9)
    pos = d + rng.integers(int(0.003 * fs), int(0.05 * fs), n_echo)
    tail[pos] += rng.uniform(-1, 1, n_echo) * np.exp(-alpha * (pos - d) / fs) * 3 * np.std(noise)
    half = int(round(DIRECT_HALF_WINDOW_S * fs))
    e_rest = np.sum(tail[: max(d - half, 0)] ** 2) + np.sum(tail[d + half + 1 :] ** 2)
    window_e = np.sum(tail[max(d - half, 0) : d + half + 1] ** 2)
    direct_e = max(10 ** (drr_db / 10) * e_rest - window_e, 1e-12)
    h = tail.copy()
    h[d] += math.sqrt(direct_e)
    return RirRecord(rir=h, direct_index=d, sample_rate=fs,
                     meta={"generator": "stochastic", "t60_target": t60, "drr_target": drr_db})


def _place_mic(rng, dims, src, r, margin=0.3):
    r = min(max(r, 0.1), 6.0)
    for _ in range(300):
        phi = rng.uniform(0, 2 * np.pi)
        dz = rng.uniform(-0.3, 0.3) * min(1.0, r)
        mic = src + np.array([r * math.cos(phi), r * math.sin(phi), dz])
        if np.all(mic > margin) and np.all(mic < dims - margin):
            return mic
        r *= 0.98
    return src + np.array([0.1, 0.0, 0.0])


def design_room(rng: np.random.Generator, t60: float, drr_db: float, seed: int,
                jitter: float = DEFAULT_JITTER, iterations: int = 2) -> RoomSpec:
    """Random shoebox aimed at a reverberation time and DRR.

    The first guess uses Eyring absorption for ``t60`` and the diffuse-field
    distance ``r = r_c 10**(-DRR/20)`` with ``r_c = sqrt(A / 16 pi)``.  Each
    calibration iteration simulates the room, then rescales the Eyring target
    by the T60 error and the distance by the DRR error.  The targets are
    approximate; labels always come from the oracles.
    """
    dims = np.array([rng.uniform(4.0, 10.0), rng.uniform(3.0, 8.0), rng.uniform(2.5, 4.0)])
    v = dims.prod()
    s = 2 * (dims[0] * dims[1] + dims[0] * dims[2] + dims[1] * dims[2])

    def absorption_for(target):
        return min(max(1 - math.exp(-0.161 * v / (s * target)), 0.01), 1.0)

    margin = 0.5
    src = np.array([rng.uniform(margin, dims[0] - margin), rng.uniform(margin, dims[1] - margin),
                    rng.uniform(1.2, min(1.8, dims[2] - margin))])
    eyring_target = t60
    alpha = absorption_for(eyring_target)
    r = math.sqrt(s * alpha / (16 * math.pi)) * 10 ** (-drr_db / 20)
    phi_rng = np.random.default_rng(rng.integers(2**32))
    mic = _place_mic(np.random.default_rng(phi_rng.integers(2**32)), dims, src, r)
    room = RoomSpec(tuple(dims), (alpha,) * 6, tuple(src), tuple(mic), jitter=jitter, seed=seed)
    for _ in range(iterations):
        rec = simulate_rir(room)
        try:
            got_t60 = estimate_t60_from_rir(rec.rir, rec.sample_rate)
        except DecayRangeUnreachable:
            got_t60 = t60
        got_drr = compute_drr_from_rir(rec.rir, rec.direct_index, rec.sample_rate, on_empty="inf")
        eyring_target *= t60 / got_t60
        alpha = absorption_for(eyring_target)
        if np.isfinite(got_drr):
            r = room.distance * 10 ** ((got_drr - drr_db) / 20)
        mic = _place_mic(np.random.default_rng(phi_rng.integers(2**32)), dims, src, r)
        room = RoomSpec(tuple(dims), (alpha,) * 6, tuple(src), tuple(mic), jitter=jitter, seed=seed)
    return room


def save_rir(path, record: RirRecord) -> None:
    """Write ``<path>`` (float32 WAV) and ``<path>.txt`` (key=value sidecar)."""
    from .audio import write_wav

    path = Path(path)
    write_wav(path, Waveform(record.rir, record.sample_rate), pcm16=False)
    lines = {
        "t60_s": repr(record.t60_s),
        "drr_db": repr(record.drr_db),
        "direct_index": str(record.direct_index),
        "sample_rate": str(record.sample_rate),
    }
    if record.room is not None:
        for k, v in asdict(record.room).items():
            lines[k] = ",".join(repr(x) for x in v) if isinstance(v, tuple) else repr(v)
    for k, v in record.meta.items():
        lines.setdefault(k, repr(v) if not isinstance(v, str) else v)
    Path(str(path) + ".txt").write_text("".join(f"{k}={v}\n" for k, v in lines.items()))


def load_rir(path) -> RirRecord:
    from .audio import read_wav

    path = Path(path)
    meta = {}
    for line in Path(str(path) + ".txt").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    fs = int(meta.get("sample_rate", SAMPLE_RATE))
    w = read_wav(path, fs)
    return RirRecord(rir=w.samples, direct_index=int(meta["direct_index"]), sample_rate=fs,
                     t60_s=float(meta["t60_s"]), drr_db=float(meta["drr_db"]), meta=meta)
