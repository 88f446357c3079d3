import numpy as np
import pytest

from apbit import backend
from apbit.apconv import ConvShape, apconv, conv_weights, to_channel_major
from apbit.apmm import TileConfig, apmm
from apbit.bitplane import decompose
from apbit.bmma import MODE_AND, MODE_CASE3, MODE_CASE3_SWAPPED, MODE_XOR
from apbit.counters import counting

pytestmark = pytest.mark.skipif("compiled" not in backend.available(), reason="extension not built")

MODES = [MODE_AND, MODE_XOR, MODE_CASE3, MODE_CASE3_SWAPPED]


def both():
    return backend.get("compiled"), backend.get("python")


@pytest.mark.parametrize("mode", MODES)
def test_gemm_block_agrees_on_partial_tiles(rng, mode):
    fast, slow = both()
    a = rng.integers(0, 2**63, (2, 13, 4), dtype=np.uint64)
    b = rng.integers(0, 2**63, (3, 21, 4), dtype=np.uint64)
    m8, n8 = 16, 24
    for r0, r1, c0, c1, w0, w1 in [(0, 32, 0, 72, 0, 4), (8, 24, 16, 40, 1, 3), (16, 32, 64, 72, 3, 4)]:
        acc_f = np.zeros((r1 - r0, c1 - c0), dtype=np.int32)
        acc_s = acc_f.copy()
        tf = fast.gemm_block(a, b, acc_f, r0, r1, c0, c1, w0, w1, m8, n8, mode)
        ts = slow.gemm_block(a, b, acc_s, r0, r1, c0, c1, w0, w1, m8, n8, mode)
        assert tf == ts
        assert np.array_equal(acc_f, acc_s)


def test_apmm_agrees_across_backends(rng):
    fast, slow = both()
    w, x = rng.integers(0, 8, (37, 300)), rng.integers(0, 4, (19, 300))
    W, X = decompose(w, 3), decompose(x, 2)
    cfg = TileConfig(16, 32, 128)
    with counting() as cf:
        yf = apmm(W, X, cfg, kernels=fast)
    with counting() as cs:
        ys = apmm(W, X, cfg, kernels=slow)
    assert np.array_equal(yf, ys)
    assert cf.bmma_tiles == cs.bmma_tiles


@pytest.mark.parametrize("geom", [(3, 1, 1), (3, 2, 0), (1, 1, 0), (3, 2, 1)])
def test_conv_agrees_across_backends(rng, geom):
    fast, slow = both()
    k, stride, pad = geom
    s = ConvShape(2, 70, 7, 6, 9, k, stride, pad)
    w = rng.integers(0, 4, (9, 70, k, k))
    x = rng.integers(0, 4, (2, 7, 6, 70))
    W, X = conv_weights(w, 2), to_channel_major(x, 2)
    with counting() as cf:
        yf = apconv(W, X, s, TileConfig(16, 32, 128), kernels=fast)
    with counting() as cs:
        ys = apconv(W, X, s, TileConfig(16, 32, 128), kernels=slow)
    assert np.array_equal(yf, ys)
    assert cf.bmma_tiles == cs.bmma_tiles


def test_naive_gemm_agrees(rng):
    fast, slow = both()
    a = rng.integers(-8, 8, (5, 33)).astype(np.int32)
    b = rng.integers(-8, 8, (7, 33)).astype(np.int32)
    assert np.array_equal(fast.naive_gemm(a, b), slow.naive_gemm(a, b))
    assert np.array_equal(np.asarray(fast.naive_gemm(a, b)), a.astype(np.int64) @ b.T)


def test_backend_selection(monkeypatch):
    assert backend.get("python").NAME == "python"
    assert backend.get("compiled").NAME == "compiled"
    monkeypatch.setenv("APBIT_BACKEND", "python")
    assert backend.get().NAME == "python"
    with pytest.raises(ValueError):
        backend.get("cuda")
