"""Binary tensor archive ("CVMX") used for model checkpoints.

Layout, all little-endian::

    b"CVMX"  u32 version  u32 n_entries
    per entry: u32 name_len, name (UTF-8), u32 rank, rank x u32 shape,
               prod(shape) x f32 payload
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"CVMX"
VERSION = 1


def _as_numpy(value) -> np.ndarray:
    if hasattr(value, "detach"):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def dumps(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, value in tensors.items():
        arr = _as_numpy(value)
        raw_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise DataError(f"not a CVMX archive (magic {blob[:4]!r})")
    if len(blob) < 12:
        raise DataError("truncated CVMX header")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported CVMX version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            if pos + n > len(blob):
                raise DataError("truncated entry name")
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", blob, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(blob):
                raise DataError(f"truncated payload for {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
            pos += 4 * size
    except struct.error as exc:
        raise DataError(f"truncated CVMX archive: {exc}") from exc
    if pos != len(blob):
        raise DataError(f"{len(blob) - pos} trailing bytes after last entry")
    return out


def save_archive(path, tensors: dict) -> None:
    Path(path).write_bytes(dumps(tensors))


def load_archive(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
