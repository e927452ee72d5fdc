"""Binary parameter checkpoints.

Layout: magic b"SFM1", then one record per entry:

    u64 LE  name length in bytes
    bytes   name (utf-8)
    u64 LE  rank
    u64 LE  dims[rank]
    f64 LE  values, row-major (rank*dims of them)

Records are written in the order given and read back into an ordered dict,
so save/load round-trips preserve parameter order.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from ..errors import ParseError

MAGIC = b"SFM1"


def write_record(fh, name: str, arr) -> None:
    """One value record: u64 name length, name, u64 rank, u64 dims, f64 data."""
    # note: ascontiguousarray would promote 0-d to 1-d; keep the rank
    data = np.asarray(arr, dtype=np.float64)
    encoded = name.encode("utf-8")
    fh.write(struct.pack("<Q", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<Q", data.ndim))
    for dim in data.shape:
        fh.write(struct.pack("<Q", dim))
    fh.write(np.ascontiguousarray(data).astype("<f8").tobytes())


def read_record(blob: bytes, pos: int, path=None):
    """Decode one record at `pos`; returns (name, array, next_pos)."""
    total = len(blob)
    if pos + 8 > total:
        raise ParseError("truncated record header", path=path)
    (name_len,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    name = blob[pos:pos + name_len].decode("utf-8")
    pos += name_len
    (rank,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    dims = struct.unpack_from(f"<{rank}Q", blob, pos) if rank else ()
    pos += 8 * rank
    count = int(np.prod(dims)) if dims else 1
    end = pos + 8 * count
    if end > total:
        raise ParseError(f"truncated values for {name!r}", path=path)
    values = np.frombuffer(blob[pos:end], dtype="<f8").reshape(dims)
    return name, np.array(values, dtype=np.float64), end


def save_arrays(path, arrays: "OrderedDict[str, np.ndarray] | dict") -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in arrays.items():
            write_record(fh, name, arr)


def load_arrays(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ParseError("bad checkpoint magic", path=str(path))
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    pos = 4
    while pos < len(blob):
        name, values, pos = read_record(blob, pos, path=str(path))
        out[name] = values
    return out
