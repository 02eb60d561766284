"""Binary tensor container ("DUNT") used for checkpoints and sample files.

Layout, all little-endian::

    b"DUNT" | version u32 | count u32
    per entry: name_len u16 | name utf-8 | dtype u8 | trainable u8 | ndim u8 | dims u32* | payload
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

MAGIC = b"DUNT"
VERSION = 1

DTYPE_CODES = {
    np.dtype("<f4"): 1,
    np.dtype("<f8"): 2,
    np.dtype("u1"): 3,
    np.dtype("<i4"): 4,
}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


class ContainerError(ValueError):
    pass


@dataclass
class Entry:
    name: str
    array: np.ndarray
    trainable: bool = False


def write_entries(fh: BinaryIO, entries: Iterable[Entry]) -> None:
    entries = list(entries)
    fh.write(MAGIC)
    fh.write(struct.pack("<II", VERSION, len(entries)))
    for e in entries:
        arr = np.asarray(e.array)
        dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        code = DTYPE_CODES.get(np.dtype(dt))
        if code is None:
            raise ContainerError(f"entry {e.name!r}: unsupported dtype {arr.dtype}")
        name = e.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ContainerError(f"entry name too long: {e.name[:40]}...")
        if arr.ndim > 0xFF:
            raise ContainerError(f"entry {e.name!r}: too many dims")
        fh.write(struct.pack("<H", len(name)))
        fh.write(name)
        fh.write(struct.pack("<BBB", code, int(bool(e.trainable)), arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=CODE_DTYPES[code]).tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ContainerError("truncated container")
    return buf


def read_entries(fh: BinaryIO) -> list[Entry]:
    if _read_exact(fh, 4) != MAGIC:
        raise ContainerError("bad magic; not a DUNT container")
    version, count = struct.unpack("<II", _read_exact(fh, 8))
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    out = []
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        code, trainable, ndim = struct.unpack("<BBB", _read_exact(fh, 3))
        if code not in CODE_DTYPES:
            raise ContainerError(f"entry {name!r}: unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        dt = CODE_DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(_read_exact(fh, nbytes), dtype=dt).reshape(dims).copy()
        out.append(Entry(name, arr, bool(trainable)))
    return out


def save(path, entries: Iterable[Entry]) -> None:
    buf = io.BytesIO()
    write_entries(buf, entries)
    Path(path).write_bytes(buf.getvalue())


def load(path) -> list[Entry]:
    with open(path, "rb") as fh:
        return read_entries(fh)


def to_bytes(entries: Iterable[Entry]) -> bytes:
    buf = io.BytesIO()
    write_entries(buf, entries)
    return buf.getvalue()
