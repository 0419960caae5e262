"""Binary checkpoint format for parameter sets.

Layout (all integers little-endian unsigned):
    magic  b"VNM1"
    u32 k, u32 layer_count, u32 head_count, u32 model_width
    u32 preamble_length, preamble bytes    (0 for bare parameter sets)
    repeated until EOF:
        u32 name_length, name bytes (utf-8)
        u32 rank, u64 dims...
        float64 little-endian values, row-major
"""

import struct

import numpy as np

from ..errors import DataError

MAGIC = b"VNM1"


def save_params(path, header: tuple, arrays: dict, preamble: bytes = b"") -> None:
    """Write named float64 arrays. header = (k, layers, heads, width)."""
    k, layers, heads, width = (int(v) for v in header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", k, layers, heads, width))
        fh.write(struct.pack("<I", len(preamble)))
        fh.write(preamble)
        for name in sorted(arrays):
            data = np.ascontiguousarray(arrays[name], dtype="<f8")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<I", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}Q", *data.shape))
            fh.write(data.tobytes())


def load_params(path):
    """Read a checkpoint; returns (header tuple, preamble bytes, arrays dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, n):
        if offset + n > len(blob):
            raise DataError(f"truncated checkpoint file: {path}")
        return blob[offset:offset + n], offset + n

    chunk, pos = need(0, 4)
    if chunk != MAGIC:
        raise DataError(f"not a checkpoint file (bad magic): {path}")
    chunk, pos = need(pos, 16)
    header = struct.unpack("<4I", chunk)
    chunk, pos = need(pos, 4)
    (preamble_len,) = struct.unpack("<I", chunk)
    preamble, pos = need(pos, preamble_len)

    arrays = {}
    while pos < len(blob):
        chunk, pos = need(pos, 4)
        (name_len,) = struct.unpack("<I", chunk)
        raw_name, pos = need(pos, name_len)
        name = raw_name.decode("utf-8")
        chunk, pos = need(pos, 4)
        (rank,) = struct.unpack("<I", chunk)
        chunk, pos = need(pos, 8 * rank)
        shape = struct.unpack(f"<{rank}Q", chunk)
        count = 1
        for s in shape:
            count *= s
        chunk, pos = need(pos, 8 * count)
        arrays[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
    return header, preamble, arrays
