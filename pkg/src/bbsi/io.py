"""Reading and writing block banded matrices in the ``.bbm`` format.

A file is one line of JSON header followed by raw block data::

    {"version": 1, "num_layers": 4, "block_sizes": [2, 2, 2, 2], "bandwidth": 1, "scalar": "c128"}\\n
    <blocks>

Blocks appear in row-major block order (row ``a`` ascending, then offset
ascending).  Each block holds little-endian 16-byte complex values (real,
then imaginary double), column-major within the block.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .core import BlockBandedMatrix, BlockLayout
from .exceptions import FormatError

__all__ = ["save_bbm", "load_bbm", "dumps_bbm", "loads_bbm", "BBM_VERSION"]

BBM_VERSION = 1
_DTYPE = np.dtype("<c16")


def dumps_bbm(m: BlockBandedMatrix) -> bytes:
    header = {
        "version": BBM_VERSION,
        "num_layers": m.num_layers,
        "block_sizes": list(m.layout.block_sizes),
        "bandwidth": m.bandwidth,
        "scalar": "c128",
    }
    parts = [json.dumps(header).encode("ascii") + b"\n"]
    for key in m.layout.band_keys():
        parts.append(np.asarray(m[key], dtype=_DTYPE).tobytes(order="F"))
    return b"".join(parts)


def loads_bbm(data: bytes) -> BlockBandedMatrix:
    nl = data.find(b"\n")
    if nl < 0:
        raise FormatError("missing header line")
    try:
        header = json.loads(data[:nl].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if header.get("version") != BBM_VERSION:
        raise FormatError(f"unsupported version {header.get('version')!r}")
    if header.get("scalar") != "c128":
        raise FormatError(f"unsupported scalar type {header.get('scalar')!r}")
    try:
        layout = BlockLayout(int(header["num_layers"]), tuple(int(s) for s in header["block_sizes"]),
                             int(header["bandwidth"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"bad layout in header: {exc}") from exc

    body = memoryview(data)[nl + 1:]
    s = layout.block_sizes
    need = sum(s[a] * s[b] for a, b in layout.band_keys()) * _DTYPE.itemsize
    if len(body) != need:
        raise FormatError(f"expected {need} bytes of block data, found {len(body)}")
    blocks, off = {}, 0
    for a, b in layout.band_keys():
        n = s[a] * s[b]
        flat = np.frombuffer(body, dtype=_DTYPE, count=n, offset=off)
        blocks[a, b] = flat.reshape((s[a], s[b]), order="F").astype(np.complex128, order="C")
        off += n * _DTYPE.itemsize
    return BlockBandedMatrix(layout, blocks, copy=False)


def save_bbm(m: BlockBandedMatrix, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_bbm(m))


def load_bbm(path: str | os.PathLike) -> BlockBandedMatrix:
    with open(path, "rb") as fh:
        return loads_bbm(fh.read())
