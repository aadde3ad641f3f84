"""SPGF snapshots: b"SPGF", u32 version, u32 nx, ny, nz, then float64 values.

Everything is little-endian and the values are z-fastest (C order of an
(nx, ny, nz) array), so a write/read round trip is bit-exact.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError, SnapshotIOError
from .grid import BC, Grid, ScalarField

MAGIC = b"SPGF"
VERSION = 1
_HEADER = struct.Struct("<4sIIII")


def write_snapshot(field: ScalarField, path) -> None:
    g = field.grid
    data = np.ascontiguousarray(field.values, dtype="<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, g.nx, g.ny, g.nz))
            fh.write(data.tobytes(order="C"))
    except OSError as exc:
        raise SnapshotIOError(f"cannot write snapshot {path}: {exc}") from exc


def read_header(path):
    try:
        with open(path, "rb") as fh:
            head = fh.read(_HEADER.size)
    except OSError as exc:
        raise SnapshotIOError(f"cannot read snapshot {path}: {exc}") from exc
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, nx, ny, nz = _HEADER.unpack(head)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    return nx, ny, nz


def read_snapshot(path, grid: Grid, bc: BC = BC.TEMPERATURE) -> ScalarField:
    nx, ny, nz = read_header(path)
    if (nx, ny, nz) != grid.shape:
        raise FormatError(f"{path}: snapshot dims {(nx, ny, nz)} do not match grid dims {grid.shape}")
    with open(path, "rb") as fh:
        fh.seek(_HEADER.size)
        raw = fh.read()
    count = nx * ny * nz
    if len(raw) != 8 * count:
        raise FormatError(f"{path}: expected {8 * count} data bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8").astype(float).reshape(grid.shape)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values")
    return ScalarField(grid, values, bc)
