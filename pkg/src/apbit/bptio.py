"""Reader and writer for the ``.bpt`` binary bit-plane tensor format.

Layout (all integers little-endian)::

    magic    4 bytes  b"APBT"
    version  u16      1, or 2 when a layout tag follows
    encoding u8       0 = {0,1}, 1 = {-1,+1}
    bits     u8       number of planes, 1..8
    rank     u8
    layout   u8       version 2 only: 0 none, 1 NCHW, 2 NHWC, 3 NPHWC
    dims     u32 x rank
    planes   for t = 0..bits-1: every row of the last axis as ceil(n/64)
             u64 words, bit c of a row at word c // 64, bit c % 64
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from apbit.bitplane import BitPlaneTensor, Encoding, WORD_BITS, words_for
from apbit.errors import BadLayoutTag, FormatError

MAGIC = b"APBT"
LAYOUTS = {None: 0, "NCHW": 1, "NHWC": 2, "NPHWC": 3}
_LAYOUT_NAMES = {v: k for k, v in LAYOUTS.items()}
_ENC_CODES = {Encoding.ZERO_ONE: 0, Encoding.PLUS_MINUS_ONE: 1}


def dumps(t: BitPlaneTensor, layout: str | None = None) -> bytes:
    if layout not in LAYOUTS:
        raise BadLayoutTag(f"unknown layout tag {layout!r}")
    version = 1 if layout is None else 2
    head = MAGIC + struct.pack("<HBBB", version, _ENC_CODES[t.encoding], t.bits, len(t.dims))
    if version == 2:
        head += struct.pack("<B", LAYOUTS[layout])
    head += struct.pack(f"<{len(t.dims)}I", *t.dims)
    minimal = -(-t.length // WORD_BITS)
    body = np.ascontiguousarray(t.planes[..., :minimal]).astype("<u8").tobytes()
    return head + body


def loads(data: bytes) -> tuple[BitPlaneTensor, str | None]:
    """Parse bytes; returns the tensor and its layout tag (None if untagged)."""
    if data[:4] != MAGIC:
        raise FormatError("not a .bpt file (bad magic)")
    try:
        version, enc, bits, rank = struct.unpack_from("<HBBB", data, 4)
        pos = 9
        layout = None
        if version == 2:
            (code,) = struct.unpack_from("<B", data, pos)
            pos += 1
            if code not in _LAYOUT_NAMES:
                raise BadLayoutTag(f"unknown layout code {code}")
            layout = _LAYOUT_NAMES[code]
        elif version != 1:
            raise FormatError(f"unsupported .bpt version {version}")
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
    except struct.error as exc:
        raise FormatError(f"truncated .bpt header: {exc}") from None
    encoding = {0: Encoding.ZERO_ONE, 1: Encoding.PLUS_MINUS_ONE}.get(enc)
    if encoding is None:
        raise FormatError(f"unknown encoding code {enc}")
    if rank == 0:
        raise FormatError("rank must be at least 1")
    minimal = -(-dims[-1] // WORD_BITS)
    shape = (bits, *dims[:-1], minimal)
    count = int(np.prod(shape, dtype=np.int64))
    if len(data) - pos != 8 * count:
        raise FormatError(f"expected {8 * count} payload bytes, found {len(data) - pos}")
    raw = np.frombuffer(data, dtype="<u8", count=count, offset=pos).reshape(shape)
    planes = np.zeros((*shape[:-1], words_for(dims[-1])), dtype=np.uint64)
    planes[..., :minimal] = raw
    return BitPlaneTensor(tuple(dims), bits, encoding, planes), layout


def save(path, t: BitPlaneTensor, layout: str | None = None) -> None:
    Path(path).write_bytes(dumps(t, layout))


def load(path) -> tuple[BitPlaneTensor, str | None]:
    return loads(Path(path).read_bytes())
