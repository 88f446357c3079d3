"""Bit-plane tensors: p-bit integers stored as p packed 1-bit planes.

Packing is LSB-first within little-endian 64-bit words along the last axis,
which is padded with zero bits to a multiple of 128 so every row covers a
whole number of 8x8x128 bmma quanta.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from apbit import counters
from apbit.errors import BadEncoding, PaddingError, ShapeMismatch, ValueOutOfRange

WORD_BITS = 64
ALIGN_BITS = 128
INT32_MIN = -(2**31)
INT32_MAX = 2**31 - 1


class Encoding(enum.Enum):
    """How a stored bit maps to a value."""

    ZERO_ONE = "01"
    PLUS_MINUS_ONE = "pm1"

    @classmethod
    def parse(cls, text: "str | Encoding") -> "Encoding":
        if isinstance(text, Encoding):
            return text
        aliases = {"01": cls.ZERO_ONE, "zero_one": cls.ZERO_ONE, "zeroone": cls.ZERO_ONE,
                   "pm1": cls.PLUS_MINUS_ONE, "plus_minus_one": cls.PLUS_MINUS_ONE, "+-1": cls.PLUS_MINUS_ONE}
        try:
            return aliases[text.lower()]
        except KeyError:
            raise BadEncoding(f"unknown encoding {text!r}") from None


def words_for(length: int) -> int:
    """64-bit words per packed row of ``length`` bits (128-bit aligned)."""
    return 2 * -(-length // ALIGN_BITS)


def pack_bits(bits01: np.ndarray, words: int | None = None) -> np.ndarray:
    """Pack a {0,1} array along its last axis into uint64 words."""
    bits01 = np.asarray(bits01, dtype=np.uint8)
    length = bits01.shape[-1]
    if words is None:
        words = words_for(length)
    pad = words * WORD_BITS - length
    if pad < 0:
        raise ShapeMismatch(f"{length} bits do not fit in {words} words")
    if pad:
        widths = [(0, 0)] * (bits01.ndim - 1) + [(0, pad)]
        bits01 = np.pad(bits01, widths)
    packed = np.packbits(bits01, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view("<u8").astype(np.uint64, copy=False)


def unpack_bits(words: np.ndarray, length: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`; returns uint8 {0,1} of the given length."""
    raw = np.ascontiguousarray(words, dtype="<u8").view(np.uint8)
    return np.unpackbits(raw, axis=-1, count=length, bitorder="little")


def padding_mask(length: int, words: int) -> np.ndarray:
    """Words with ones exactly on the bit positions at or beyond ``length``."""
    return pack_bits(np.arange(words * WORD_BITS) >= length, words)


@dataclass(frozen=True)
class BitPlaneTensor:
    """Immutable p-bit tensor held as ``bits`` packed planes.

    ``planes`` has shape ``(bits, *dims[:-1], words)``; plane t holds bit t of
    every element (for +-1 data, stored bit 0 means -1).
    """

    dims: tuple[int, ...]
    bits: int
    encoding: Encoding
    planes: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if not dims or any(d <= 0 for d in dims):
            raise ShapeMismatch(f"dims must be positive, got {dims}")
        if not 1 <= self.bits <= 8:
            raise ValueOutOfRange(f"bits must be in [1, 8], got {self.bits}")
        if self.encoding is Encoding.PLUS_MINUS_ONE and self.bits != 1:
            raise BadEncoding("+-1 encoding is only defined for 1-bit data")
        expected = (self.bits, *dims[:-1], words_for(dims[-1]))
        planes = np.asarray(self.planes)
        if planes.dtype != np.uint64 or planes.shape != expected:
            raise ShapeMismatch(f"planes must be uint64 {expected}, got {planes.dtype} {planes.shape}")
        if np.any(planes & padding_mask(dims[-1], expected[-1])):
            raise PaddingError("padding bits beyond the logical extent must be zero")
        if planes.flags.writeable:
            planes = planes.copy()
            planes.flags.writeable = False
        object.__setattr__(self, "planes", planes)

    @property
    def length(self) -> int:
        return self.dims[-1]

    @property
    def rows(self) -> int:
        return int(np.prod(self.dims[:-1], dtype=np.int64))

    @property
    def words(self) -> int:
        return self.planes.shape[-1]

    def matrix_planes(self) -> np.ndarray:
        """Planes viewed as ``(bits, rows, words)``."""
        return self.planes.reshape(self.bits, self.rows, self.words)

    def plane(self, t: int) -> np.ndarray:
        return self.planes[t]

    def __eq__(self, other):
        if not isinstance(other, BitPlaneTensor):
            return NotImplemented
        return (self.dims == other.dims and self.bits == other.bits
                and self.encoding is other.encoding and np.array_equal(self.planes, other.planes))

    __hash__ = None


def check_values(x: np.ndarray, bits: int, encoding: Encoding) -> None:
    if not 1 <= bits <= 8:
        raise ValueOutOfRange(f"bits must be in [1, 8], got {bits}")
    if encoding is Encoding.PLUS_MINUS_ONE:
        if bits != 1:
            raise BadEncoding("+-1 encoding requires bits == 1")
        if x.size and not np.all((x == 1) | (x == -1)):
            raise ValueOutOfRange("+-1 data must contain only -1 and +1")
    elif x.size and (x.min() < 0 or x.max() > (1 << bits) - 1):
        raise ValueOutOfRange(f"values must lie in [0, {(1 << bits) - 1}] for {bits}-bit data")


def stored_bits(x: np.ndarray, encoding: Encoding) -> np.ndarray:
    """Map values to the non-negative integers whose bits get stored."""
    if encoding is Encoding.PLUS_MINUS_ONE:
        return (x + 1) // 2
    return x


def decompose(x, bits: int, encoding: Encoding = Encoding.ZERO_ONE) -> BitPlaneTensor:
    """Split integers into ``bits`` planes, plane t = (x >> t) & 1."""
    encoding = Encoding.parse(encoding)
    x = np.asarray(x)
    if x.ndim == 0:
        x = x.reshape(1)
    if not np.issubdtype(x.dtype, np.integer):
        raise ValueOutOfRange(f"integer input required, got {x.dtype}")
    x = x.astype(np.int64)
    check_values(x, bits, encoding)
    raw = stored_bits(x, encoding)
    words = words_for(x.shape[-1])
    planes = np.stack([pack_bits((raw >> t) & 1, words) for t in range(bits)])
    counters.record(decompose=x.size * bits)
    return BitPlaneTensor(x.shape, bits, encoding, planes)


def reconstruct(t: BitPlaneTensor) -> np.ndarray:
    """Decode planes back to int32 values."""
    planes = unpack_bits(t.planes, t.length).astype(np.int64)
    if t.encoding is Encoding.PLUS_MINUS_ONE:
        return (2 * planes[0] - 1).astype(np.int32)
    weights = (1 << np.arange(t.bits, dtype=np.int64)).reshape((t.bits,) + (1,) * len(t.dims))
    return (planes * weights).sum(axis=0).astype(np.int32)


def to_int32(y: np.ndarray) -> np.ndarray:
    """Narrow an int64 accumulator to int32, refusing silent wrap-around."""
    y = np.asarray(y)
    if y.size and (y.min() < INT32_MIN or y.max() > INT32_MAX):
        raise OverflowError("result exceeds the 32-bit accumulator range")
    return y.astype(np.int32)


def combine(components: "Mapping[tuple[int, int], np.ndarray] | Sequence[np.ndarray]", p: int, q: int) -> np.ndarray:
    """Y = sum_s sum_t Y^(s,t) * 2^(s+t).

    ``components`` is either a mapping keyed by ``(s, t)`` or a sequence in
    row-major ``(s, t)`` order.
    """
    if isinstance(components, Mapping):
        keys = {(s, t) for s in range(p) for t in range(q)}
        if set(components) != keys:
            raise ShapeMismatch(f"expected components for every (s, t) in {p}x{q}")
        parts = [components[(s, t)] for s in range(p) for t in range(q)]
    else:
        parts = list(components)
        if len(parts) != p * q:
            raise ShapeMismatch(f"expected {p * q} components, got {len(parts)}")
    parts = [np.asarray(c, dtype=np.int64) for c in parts]
    shape = parts[0].shape
    if any(c.shape != shape for c in parts):
        raise ShapeMismatch("components must share one shape")
    out = np.zeros(shape, dtype=np.int64)
    for idx, c in enumerate(parts):
        s, t = divmod(idx, q)
        out += c << (s + t)
    counters.record(combine=p * q * out.size)
    return to_int32(out)
