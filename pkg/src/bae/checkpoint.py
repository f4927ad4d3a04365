"""Binary checkpoint container: named float64 arrays behind a versioned header.

Layout (all integers little-endian uint32, floats little-endian float64):

    magic b"NTC1" | version | entry count
    per entry: name length | UTF-8 name | ndim | dims... | payload

Round-trips are bit-exact; any structural damage raises CheckpointError.
"""

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"NTC1"
VERSION = 1


class CheckpointError(RuntimeError):
    """Corrupted, truncated, or version-incompatible checkpoint file."""


def save_entries(path, entries):
    """Write an ordered mapping of name -> float array to ``path``."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name, arr in entries.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        raw_name = name.encode("utf-8")
        blob += struct.pack("<I", len(raw_name)) + raw_name
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b""
        blob += arr.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_entries(path):
    """Read a checkpoint back into an OrderedDict of name -> float64 array."""
    with open(path, "rb") as fh:
        blob = fh.read()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise CheckpointError("bad magic: not a checkpoint file")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    entries = OrderedDict()
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (ndim,) = struct.unpack("<I", take(4, "ndim"))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape")) if ndim else ()
        n_vals = int(np.prod(shape)) if shape else 1
        payload = take(8 * n_vals, f"entry '{name}'")
        arr = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
        entries[name] = arr
    if off != len(blob):
        raise CheckpointError("trailing bytes after final entry")
    return entries
