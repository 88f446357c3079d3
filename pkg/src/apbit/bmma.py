"""The 1-bit multiply-accumulate primitive and its encoding-adaptive rules.

Case I   ({0,1} x {0,1}):   popc(w AND x)
Case II  ({-1,1} x {-1,1}): n - 2 popc(w XOR x)
Case III ({-1,1} x {0,1}):  2 popc(w_hat AND x) - popc(x)

A ({0,1} weights, {-1,1} features) pair is Case III with operands swapped.
"""

from __future__ import annotations

import enum

import numpy as np

from apbit.backend import kernels as _default_kernels
from apbit.bitplane import Encoding
from apbit.errors import LengthMismatch, PaddingError, ShapeMismatch

MODE_AND = 0
MODE_XOR = 1
MODE_CASE3 = 2
MODE_CASE3_SWAPPED = 3

TILE_ROWS = 8
TILE_BITS = 128


class Case(enum.Enum):
    I = "I"  # noqa: E741
    II = "II"
    III = "III"


class BmmaOp(enum.Enum):
    AND = "and"
    XOR = "xor"


def select_operator(w_enc: Encoding, x_enc: Encoding) -> Case:
    w_enc, x_enc = Encoding.parse(w_enc), Encoding.parse(x_enc)
    if w_enc is x_enc:
        return Case.I if w_enc is Encoding.ZERO_ONE else Case.II
    return Case.III


def bit_op(case: Case) -> BmmaOp:
    return BmmaOp.XOR if case is Case.II else BmmaOp.AND


def kernel_mode(w_enc: Encoding, x_enc: Encoding) -> int:
    """Kernel mode for an operand pair, including the swapped Case III."""
    case = select_operator(w_enc, x_enc)
    if case is Case.I:
        return MODE_AND
    if case is Case.II:
        return MODE_XOR
    return MODE_CASE3 if Encoding.parse(w_enc) is Encoding.PLUS_MINUS_ONE else MODE_CASE3_SWAPPED


def _popc(words) -> int:
    return sum(int(w).bit_count() for w in words)


def dot1(w_row, x_row, n: int, case: Case, swapped: bool = False) -> int:
    """Dot product of two packed 1-bit vectors of logical length ``n``.

    For Case III the +-1 operand is ``w_row`` unless ``swapped``.
    """
    w_row = [int(w) for w in np.asarray(w_row, dtype=np.uint64).ravel()]
    x_row = [int(w) for w in np.asarray(x_row, dtype=np.uint64).ravel()]
    if len(w_row) != len(x_row):
        raise LengthMismatch(f"{len(w_row)} words vs {len(x_row)} words")
    if not 0 <= n <= 64 * len(w_row):
        raise LengthMismatch(f"length {n} does not fit in {len(w_row)} words")
    for row in (w_row, x_row):
        for i, word in enumerate(row):
            live = min(max(n - 64 * i, 0), 64)
            if word >> live:
                raise PaddingError("padding bits beyond n must be zero")
    if case is Case.I:
        return _popc(a & b for a, b in zip(w_row, x_row))
    if case is Case.II:
        return n - 2 * _popc(a ^ b for a, b in zip(w_row, x_row))
    both = 2 * _popc(a & b for a, b in zip(w_row, x_row))
    return both - _popc(w_row if swapped else x_row)


def _case_mode(case: Case, swapped: bool) -> int:
    if case is Case.I:
        return MODE_AND
    if case is Case.II:
        return MODE_XOR
    return MODE_CASE3_SWAPPED if swapped else MODE_CASE3


def bmma_tile(a, b, c, case: Case, swapped: bool = False, kernels=None) -> np.ndarray:
    """One 8x8x128 step: returns C + [dot1(A_i, B_j, 128, case)]_ij.

    ``a`` and ``b`` are (8, 2) uint64 tiles (8 rows of 128 bits); ``c`` is the
    (8, 8) int32 accumulator and is left untouched.
    """
    kernels = kernels or _default_kernels
    a = np.ascontiguousarray(a, dtype=np.uint64)
    b = np.ascontiguousarray(b, dtype=np.uint64)
    c = np.array(c, dtype=np.int32, copy=True)
    if a.shape != (TILE_ROWS, 2) or b.shape != (TILE_ROWS, 2) or c.shape != (TILE_ROWS, TILE_ROWS):
        raise ShapeMismatch("bmma_tile needs 8x128-bit operands and an 8x8 accumulator")
    kernels.gemm_block(a[None], b[None], c, 0, 8, 0, 8, 0, 2, 8, 8, _case_mode(case, swapped))
    return c
