"""Little-endian primitives for the versioned binary artifact formats."""

from __future__ import annotations

import io
import json
import struct

import numpy as np

from .errors import FormatError


class Writer:
    def __init__(self, magic: bytes, version: int):
        self.buf = io.BytesIO()
        self.buf.write(magic)
        self.u32(version)

    def u32(self, v: int):
        self.buf.write(struct.pack("<I", v))

    def u64(self, v: int):
        self.buf.write(struct.pack("<Q", v))

    def f64(self, v: float):
        self.buf.write(struct.pack("<d", v))

    def text(self, s: str):
        b = s.encode("utf-8")
        self.u32(len(b))
        self.buf.write(b)

    def json(self, obj):
        self.text(json.dumps(obj, sort_keys=True))

    def array(self, a):
        """Shape-prefixed float64 block, C order."""
        a = np.ascontiguousarray(a, dtype="<f8")
        self.u32(a.ndim)
        for d in a.shape:
            self.u64(d)
        self.buf.write(a.tobytes())

    def getvalue(self) -> bytes:
        return self.buf.getvalue()


class Reader:
    def __init__(self, data: bytes, magic: bytes, versions=(1,)):
        self.data = memoryview(data)
        self.pos = 0
        got = bytes(self._take(len(magic)))
        if got != magic:
            raise FormatError(f"bad magic {got!r}, expected {magic!r}")
        self.version = self.u32()
        if self.version not in versions:
            raise FormatError(f"unsupported format version {self.version}")

    def _take(self, n: int):
        if self.pos + n > len(self.data):
            raise FormatError("truncated file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        return bytes(self._take(self.u32())).decode("utf-8")

    def json(self):
        return json.loads(self.text())

    def array(self) -> np.ndarray:
        ndim = self.u32()
        shape = tuple(self.u64() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = self._take(8 * count)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    def done(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes")
