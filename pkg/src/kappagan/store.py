"""Binary container: magic, format version, JSON header, then raw little-endian arrays.

Layout::

    8 bytes   magic
    uint32    format version
    uint64    header length (bytes)
    header    UTF-8 JSON; ``arrays`` lists name, dtype and shape in file order
    payload   the arrays back to back, C order
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"KGANBIN\x00"
VERSION = 1


class ContainerError(ValueError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


def write_container(path, header: dict, arrays: dict[str, np.ndarray]) -> None:
    specs, chunks = [], []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        arr = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        specs.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape)})
        chunks.append(arr.tobytes())
    head = json.dumps({**header, "arrays": specs}, sort_keys=True).encode()
    blob = MAGIC + struct.pack("<IQ", VERSION, len(head)) + head + b"".join(chunks)
    atomic_write_bytes(path, blob)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ContainerError(f"{path}: not a container file")
    version, hlen = struct.unpack("<IQ", blob[8:20])
    if version != VERSION:
        raise ContainerError(f"{path}: unsupported container version {version}")
    header = json.loads(blob[20 : 20 + hlen])
    offset = 20 + hlen
    arrays = {}
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        count = int(np.prod(spec["shape"], dtype=np.int64))
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(spec["shape"]).copy()
        offset += count * dtype.itemsize
    if offset != len(blob):
        raise ContainerError(f"{path}: {len(blob) - offset} trailing bytes")
    return header, arrays
