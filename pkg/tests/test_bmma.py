import numpy as np
import pytest

from apbit.bitplane import Encoding, pack_bits
from apbit.bmma import Case, bmma_tile, dot1, kernel_mode, select_operator
from apbit.errors import LengthMismatch, PaddingError, ShapeMismatch

Z, PM = Encoding.ZERO_ONE, Encoding.PLUS_MINUS_ONE


def packed(bits01):
    return pack_bits(np.asarray(bits01))


def test_select_operator():
    assert select_operator(Z, Z) is Case.I
    assert select_operator(PM, PM) is Case.II
    assert select_operator(PM, Z) is Case.III
    assert select_operator(Z, PM) is Case.III
    assert kernel_mode(PM, Z) != kernel_mode(Z, PM)


def test_dot1_examples():
    assert dot1(packed([0, 1]), packed([1, 1]), 2, Case.I) == 1
    # w = [-1, 1] stored [0, 1]; x = [1, 1]
    assert dot1(packed([0, 1]), packed([1, 1]), 2, Case.II) == 0
    assert dot1(packed([0, 1]), packed([1, 0]), 2, Case.III) == -1


def decode(bits01, enc):
    b = np.asarray(bits01, dtype=np.int64)
    return 2 * b - 1 if enc is PM else b


@pytest.mark.parametrize("case,encs", [(Case.I, (Z, Z)), (Case.II, (PM, PM)), (Case.III, (PM, Z))])
def test_dot1_matches_scalar_dot_for_every_length(case, encs):
    rng = np.random.default_rng(7)
    for n in range(1, 513):
        w = rng.integers(0, 2, n)
        x = rng.integers(0, 2, n)
        expect = int(np.dot(decode(w, encs[0]), decode(x, encs[1])))
        assert dot1(packed(w), packed(x), n, case) == expect, n


def test_dot1_swapped_case3():
    rng = np.random.default_rng(3)
    for n in (1, 64, 65, 300):
        w = rng.integers(0, 2, n)
        x = rng.integers(0, 2, n)
        expect = int(np.dot(w, 2 * x - 1))
        assert dot1(packed(w), packed(x), n, Case.III, swapped=True) == expect


def test_case3_identity():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(1, 400))
        w = rng.choice([-1, 1], n)
        x = rng.integers(0, 2, n)
        w_hat = (w + 1) // 2
        assert 2 * int(np.sum(w_hat & x)) - int(np.sum(x)) == int(np.dot(w, x))
        assert dot1(packed(w_hat), packed(x), n, Case.III) == int(np.dot(w, x))


def test_case2_uses_logical_length():
    # all -1 against all -1 over 10 bits: 10, not 128
    zeros = packed(np.zeros(10, dtype=int))
    assert dot1(zeros, zeros, 10, Case.II) == 10


def test_dot1_errors():
    with pytest.raises(LengthMismatch):
        dot1(packed([1] * 10), packed([1] * 200), 10, Case.I)
    with pytest.raises(LengthMismatch):
        dot1(packed([1] * 10), packed([1] * 10), 500, Case.I)
    with pytest.raises(PaddingError):
        dot1(packed([1] * 10), packed([1] * 10), 5, Case.I)


def full_tile(value):
    return np.full((8, 2), value, dtype=np.uint64)


def test_bmma_tile_all_ones(kernels):
    ones = full_tile(np.uint64(2**64 - 1))
    zero = np.zeros((8, 8), dtype=np.int32)
    assert np.all(bmma_tile(ones, ones, zero, Case.I, kernels=kernels) == 128)
    assert np.all(bmma_tile(ones, ones, zero, Case.II, kernels=kernels) == 128)


def test_bmma_tile_accumulates_and_matches_scalar(kernels):
    rng = np.random.default_rng(11)
    for case, encs, swapped in [(Case.I, (Z, Z), False), (Case.II, (PM, PM), False),
                                (Case.III, (PM, Z), False), (Case.III, (Z, PM), True)]:
        a_bits = rng.integers(0, 2, (8, 128))
        b_bits = rng.integers(0, 2, (8, 128))
        c = rng.integers(-100, 100, (8, 8)).astype(np.int32)
        out = bmma_tile(packed(a_bits), packed(b_bits), c, case, swapped, kernels=kernels)
        expect = c + decode(a_bits, encs[0]) @ decode(b_bits, encs[1]).T
        assert np.array_equal(out, expect)


@pytest.mark.parametrize("mode", [0, 1, 2, 3])
def test_k_chunks_are_associative(kernels, mode):
    rng = np.random.default_rng(mode)
    a = rng.integers(0, 2**63, (1, 8, 2), dtype=np.uint64)
    b = rng.integers(0, 2**63, (1, 8, 2), dtype=np.uint64)
    whole = np.zeros((8, 8), dtype=np.int32)
    kernels.gemm_block(a, b, whole, 0, 8, 0, 8, 0, 2, 8, 8, mode)
    split = np.zeros((8, 8), dtype=np.int32)
    kernels.gemm_block(a, b, split, 0, 8, 0, 8, 0, 1, 8, 8, mode)
    kernels.gemm_block(a, b, split, 0, 8, 0, 8, 1, 2, 8, 8, mode)
    assert np.array_equal(whole, split)


def test_bmma_tile_shape_checks():
    with pytest.raises(ShapeMismatch):
        bmma_tile(np.zeros((8, 1), dtype=np.uint64), full_tile(0), np.zeros((8, 8)), Case.I)
    with pytest.raises(ShapeMismatch):
        bmma_tile(full_tile(0), full_tile(0), np.zeros((4, 8)), Case.I)
