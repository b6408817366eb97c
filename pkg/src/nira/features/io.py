"""Feature cache files.

Binary layout (little endian, version 1)::

    magic      8 bytes  b"NIRAFEAT"
    version    u32
    utt_id     u32 length + UTF-8
    meta       u32 length + UTF-8 JSON (config hash, seed, ...)
    n_rows     u64
    n_cols     u32      always 134
    names      n_cols x (u32 length + UTF-8)
    values     n_rows * n_cols float64, row major
    times      n_rows float64, frame centre times in seconds
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..binio import Reader, Writer
from ..errors import FormatError
from .assemble import N_FEATURES, FeatureMatrix

MAGIC = b"NIRAFEAT"
VERSION = 1


def dumps_features(fm: FeatureMatrix, meta: dict | None = None) -> bytes:
    w = Writer(MAGIC, VERSION)
    w.text(fm.utterance_id)
    w.json(meta or {})
    w.u64(fm.n_frames)
    w.u32(fm.values.shape[1])
    for name in fm.column_names:
        w.text(name)
    w.buf.write(np.ascontiguousarray(fm.values, dtype="<f8").tobytes())
    w.buf.write(np.ascontiguousarray(fm.frame_times, dtype="<f8").tobytes())
    return w.getvalue()


def loads_features(data: bytes):
    """Return ``(FeatureMatrix, meta)``."""
    r = Reader(data, MAGIC)
    utt = r.text()
    meta = r.json()
    n_rows = r.u64()
    n_cols = r.u32()
    if n_cols != N_FEATURES:
        raise FormatError(f"expected {N_FEATURES} columns, file has {n_cols}")
    names = tuple(r.text() for _ in range(n_cols))
    values = np.frombuffer(r._take(8 * n_rows * n_cols), dtype="<f8").reshape(n_rows, n_cols).copy()
    times = np.frombuffer(r._take(8 * n_rows), dtype="<f8").copy()
    r.done()
    return FeatureMatrix(values, utt, times, names), meta


def save_features(path, fm: FeatureMatrix, meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_features(fm, meta))
    tmp.replace(path)


def load_features(path):
    return loads_features(Path(path).read_bytes())


def export_csv(path, fm: FeatureMatrix) -> None:
    """Human-readable export: one row per frame, time first."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["time_s", *fm.column_names])
        for t, row in zip(fm.frame_times, fm.values):
            out.writerow([repr(float(t)), *(repr(float(v)) for v in row)])
