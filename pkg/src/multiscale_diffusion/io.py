"""Binary trajectory tables with JSON sidecars.

Layout of a ``.bin`` file, all little-endian::

    magic   4 bytes  b"MSTR"
    version uint32   1
    n       uint64   number of rows (trajectories)
    length  uint64   values per row
    data    n * length float64, row-major

The sidecar ``<name>.json`` sits next to it and carries whatever metadata
the writer provides (config, present index, provenance).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MSTR"
VERSION = 1
_HEADER = struct.Struct("<4sIQQ")


class ArtifactError(IOError):
    """Missing or malformed artifact file."""


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def write_table(path: str | Path, values: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    arr = np.ascontiguousarray(np.atleast_2d(values), dtype="<f8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_table(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{path}: no such file")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ArtifactError(f"{path}: truncated header")
    magic, version, n, length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ArtifactError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ArtifactError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 8 * n * length
    if len(raw) != expected:
        raise ArtifactError(f"{path}: expected {expected} bytes, found {len(raw)}")
    values = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, length).astype(np.float64)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return values, meta
