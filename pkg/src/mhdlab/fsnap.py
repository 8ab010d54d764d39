"""FSNAP1 snapshot files: one JSON header line, then little-endian float64 data.

The payload is ordered (t, component, z, y, x), which is the C order of
``FieldSnapshot.data``.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .grid import FieldSnapshot, Grid

MAGIC = "FSNAP1"
_DTYPE = np.dtype("<f8")


class SnapshotFormatError(ValidationError):
    """Malformed FSNAP1 file."""


def header_for(X: FieldSnapshot, field_name: str | None = None) -> dict:
    g = X.grid
    return {
        "magic": MAGIC,
        "nx": g.nx, "ny": g.ny, "nz": g.nz, "nt": g.nt,
        "box_length": list(g.box_length),
        "dt": g.dt, "t_start": g.t_start,
        "components": X.components,
        "field_name": field_name if field_name is not None else X.name,
    }


def write_fsnap(path: str | os.PathLike, X: FieldSnapshot, field_name: str | None = None) -> Path:
    path = Path(path)
    head = json.dumps(header_for(X, field_name), sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(head.encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(X.data, dtype=_DTYPE).tobytes(order="C"))
    return path


def read_header(path: str | os.PathLike) -> tuple[dict, int]:
    """Return the parsed header and the byte offset of the payload."""
    with open(path, "rb") as fh:
        line = fh.readline()
    if not line.endswith(b"\n"):
        raise SnapshotFormatError(f"{path}: missing header line terminator")
    try:
        head = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"{path}: header is not valid JSON ({exc})") from None
    if not isinstance(head, dict) or head.get("magic") != MAGIC:
        raise SnapshotFormatError(f"{path}: bad magic, expected {MAGIC}")
    missing = {"nx", "ny", "nz", "nt", "box_length", "dt", "t_start", "components", "field_name"} - set(head)
    if missing:
        raise SnapshotFormatError(f"{path}: header missing keys {sorted(missing)}")
    return head, len(line)


def read_fsnap(path: str | os.PathLike) -> FieldSnapshot:
    head, offset = read_header(path)
    grid = Grid(int(head["nx"]), int(head["ny"]), int(head["nz"]), tuple(head["box_length"]),
                int(head["nt"]), float(head["dt"]), float(head["t_start"]))
    comps = int(head["components"])
    if comps not in (1, 3):
        raise SnapshotFormatError(f"{path}: components must be 1 or 3, got {comps}")
    count = grid.nt * comps * grid.nx * grid.ny * grid.nz
    size = os.path.getsize(path) - offset
    if size != count * _DTYPE.itemsize:
        raise SnapshotFormatError(f"{path}: payload has {size} bytes, expected {count * _DTYPE.itemsize}")
    data = np.fromfile(path, dtype=_DTYPE, count=count, offset=offset)
    data = data.astype(np.float64).reshape((grid.nt, comps) + grid.shape3)
    return FieldSnapshot(grid, data, str(head["field_name"]))
