"""Binary field snapshots and CSV tables.

Snapshot layout (little-endian): magic ``CBF1``; header ``n: u32, L: f64,
r: u32, t: f64, count: u32``; then ``count`` fields, each as complex128
coefficient triples (c_x, c_y, c_z) in lexicographic order of
k in {-n/2+1, ..., n/2}^3.  An optional trailer ``HASH`` + 64 ASCII hex
digits records the config hash.
"""

from __future__ import annotations

import csv
import io as _io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spectral import Grid, SpectralField

MAGIC = b"CBF1"
_HEADER = struct.Struct("<IdIdI")
_TRAILER = b"HASH"


@dataclass(frozen=True)
class SnapshotHeader:
    n: int
    L: float
    r: int
    t: float
    count: int
    config_hash: str = ""


def _order(n: int) -> np.ndarray:
    """FFT-order indices of k = -n/2+1 .. n/2."""
    k = np.arange(-n // 2 + 1, n // 2 + 1)
    return np.mod(k, n)


def encode_fields(fields, r: int, t: float, config_hash: str = "") -> bytes:
    fields = list(fields)
    if not fields:
        raise ValueError("no fields to write")
    g = fields[0].grid
    if any(f.grid != g for f in fields):
        raise ValueError("fields live on different grids")
    idx = _order(g.n)
    buf = bytearray(MAGIC)
    buf += _HEADER.pack(g.n, g.L, int(r), float(t), len(fields))
    for f in fields:
        c = f.coeffs[:, idx][:, :, idx][:, :, :, idx]
        buf += np.ascontiguousarray(np.moveaxis(c, 0, -1)).astype("<c16").tobytes()
    if config_hash:
        h = config_hash.encode("ascii")
        if len(h) != 64:
            raise ValueError("config hash must be 64 hex digits")
        buf += _TRAILER + h
    return bytes(buf)


def decode_fields(data: bytes) -> tuple[SnapshotHeader, list[SpectralField]]:
    if data[:4] != MAGIC:
        raise ValueError("not a CBF1 snapshot")
    n, L, r, t, count = _HEADER.unpack_from(data, 4)
    off = 4 + _HEADER.size
    per = 3 * n**3 * 16
    end = off + count * per
    if len(data) < end:
        raise ValueError("truncated snapshot")
    g = Grid(n, L)
    idx = _order(n)
    fields = []
    for i in range(count):
        raw = np.frombuffer(data, dtype="<c16", count=3 * n**3, offset=off + i * per)
        lex = np.moveaxis(raw.reshape(n, n, n, 3), -1, 0)
        c = np.empty((3, n, n, n), dtype=complex)
        c[np.ix_(range(3), idx, idx, idx)] = lex
        fields.append(SpectralField(g, c))
    h = ""
    if data[end : end + 4] == _TRAILER:
        h = data[end + 4 : end + 68].decode("ascii")
    return SnapshotHeader(n, L, r, t, count, h), fields


def write_snapshot(path, fields, r: int, t: float, config_hash: str = "") -> Path:
    path = Path(path)
    path.write_bytes(encode_fields(fields, r, t, config_hash))
    return path


def read_snapshot(path) -> tuple[SnapshotHeader, list[SpectralField]]:
    return decode_fields(Path(path).read_bytes())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def csv_text(columns, rows, config_hash: str) -> str:
    """CSV with a leading ``# config_hash`` comment; floats keep full precision."""
    out = _io.StringIO()
    out.write(f"# config_hash={config_hash}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return out.getvalue()


def write_csv(path, columns, rows, config_hash: str) -> Path:
    path = Path(path)
    path.write_text(csv_text(columns, rows, config_hash), encoding="utf-8")
    return path


def read_csv(path) -> tuple[str, list[dict]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    h = ""
    if lines and lines[0].startswith("# config_hash="):
        h = lines[0].split("=", 1)[1]
        lines = lines[1:]
    return h, list(csv.DictReader(lines))
