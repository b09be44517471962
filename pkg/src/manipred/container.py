"""Flat binary container for model parameters.

Layout (little-endian)::

    magic      4 bytes  b"MPRC"
    version    uint32   (currently 1)
    type tag   4 bytes  e.g. b"LSTM", b"GHMM", b"WNDC"
    meta_len   uint32
    meta       meta_len bytes of UTF-8 JSON (sorted keys)
    n_arrays   uint32
    n_arrays times:
        name_len uint16, name (UTF-8)
        ndim     uint8,  dims uint32 * ndim
        data     float64 * prod(dims), row-major

Arrays are written in the order given, so equal inputs produce equal bytes.
"""

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MPRC"
VERSION = 1


def atomic_write_bytes(path, data):
    """Write to a temp file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def encode(tag, meta, arrays):
    if len(tag) != 4:
        raise ValueError("type tag must be 4 bytes")
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", VERSION), tag,
             struct.pack("<I", len(meta_bytes)), meta_bytes,
             struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb)
        parts.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n, field):
        if self.pos + n > len(self.data):
            raise FormatError(self.path, field, "file truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def decode(data, path="<bytes>"):
    """Return ``(tag, meta, arrays)``; raises FormatError on any defect."""
    r = _Reader(data, path)
    if r.take(4, "magic") != MAGIC:
        raise FormatError(path, "magic", "not a model container")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(path, "version", f"unsupported version {version}")
    tag = r.take(4, "type tag")
    (meta_len,) = r.unpack("<I", "meta length")
    try:
        meta = json.loads(r.take(meta_len, "meta").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(path, "meta", str(exc)) from None
    (count,) = r.unpack("<I", "array count")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H", "array name length")
        name = r.take(nlen, "array name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"{name} ndim")
        shape = r.unpack(f"<{ndim}I", f"{name} shape")
        size = int(np.prod(shape)) if ndim else 1
        buf = r.take(8 * size, f"{name} data")
        arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(arr)):
            raise FormatError(path, name, "non-finite values")
        arrays[name] = arr
    if r.pos != len(data):
        raise FormatError(path, "trailer", f"{len(data) - r.pos} unexpected trailing bytes")
    return tag, meta, arrays


def save(path, tag, meta, arrays):
    atomic_write_bytes(path, encode(tag, meta, arrays))


def load(path, expect_tag=None):
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(path, "file", exc.strerror or str(exc)) from None
    tag, meta, arrays = decode(data, path)
    if expect_tag is not None and tag != expect_tag:
        raise FormatError(path, "type tag", f"expected {expect_tag!r}, found {tag!r}")
    return tag, meta, arrays
