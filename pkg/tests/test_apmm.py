import numpy as np
import pytest

from apbit import counters, reference
from apbit.apmm import TileConfig, apmm, apmm_planewise, legal_configs, pack_output, plan_traffic
from apbit.bitplane import Encoding, decompose, reconstruct
from apbit.counters import TrafficCounter
from apbit.epilogue import BatchNorm, Epilogue, Pool, Quantize
from apbit.errors import BadTileConfig, ShapeMismatch

Z, PM = Encoding.ZERO_ONE, Encoding.PLUS_MINUS_ONE


def vals(rng, shape, bits, enc):
    return rng.choice([-1, 1], shape) if enc is PM else rng.integers(0, 1 << bits, shape)


def legal_pairs(p, q):
    pairs = [(Z, Z)]
    if p == q == 1:
        pairs.append((PM, PM))
    if p == 1:
        pairs.append((PM, Z))
    if q == 1:
        pairs.append((Z, PM))
    return pairs


def test_single_overlapping_bit():
    w = np.zeros((1, 128), dtype=int)
    x = np.zeros((1, 128), dtype=int)
    w[0, 5] = x[0, 5] = 1
    w[0, 6] = 1
    assert apmm(decompose(w, 1), decompose(x, 1), TileConfig()).tolist() == [[1]]


@pytest.mark.parametrize("p", range(1, 9))
@pytest.mark.parametrize("q", range(1, 9))
def test_oracle_grid(p, q):
    rng = np.random.default_rng(100 * p + q)
    for w_enc, x_enc in legal_pairs(p, q):
        M, N = (int(v) for v in rng.choice([8, 16, 64, 128], 2))
        K = int(rng.choice([128, 256, 512]))
        w, x = vals(rng, (M, K), p, w_enc), vals(rng, (N, K), q, x_enc)
        y = apmm(decompose(w, p, w_enc), decompose(x, q, x_enc))
        assert y.dtype == np.int32
        assert np.array_equal(y, reference.gemm(w, x)), (w_enc, x_enc, M, N, K)


def test_backends_on_ragged_shapes(kernels, rng):
    for p, q, w_enc, x_enc in [(2, 3, Z, Z), (1, 1, PM, PM), (1, 3, PM, Z), (3, 1, Z, PM)]:
        w, x = vals(rng, (20, 300), p, w_enc), vals(rng, (37, 300), q, x_enc)
        y = apmm(decompose(w, p, w_enc), decompose(x, q, x_enc), TileConfig(16, 32, 256), kernels=kernels)
        assert np.array_equal(y, reference.gemm(w, x))


def test_headline_shape_and_config_sweep(rng):
    w, x = rng.integers(0, 4, (64, 1024)), rng.integers(0, 4, (1024, 1024))
    W, X = decompose(w, 2), decompose(x, 2)
    expect = reference.gemm(w, x)
    first = None
    for cfg in legal_configs():
        y = apmm(W, X, cfg)
        if first is None:
            assert np.array_equal(y, expect)
            first = y
        assert np.array_equal(y, first), cfg


def test_w1a2_random_square(rng):
    w, x = rng.integers(0, 2, (128, 128)), rng.integers(0, 4, (128, 128))
    assert np.array_equal(apmm(decompose(w, 1), decompose(x, 2)), reference.gemm(w, x))


def test_virtual_batching_matches_planewise(rng, kernels):
    for p, q, w_enc, x_enc in [(3, 2, Z, Z), (1, 1, PM, PM), (1, 4, PM, Z)]:
        w, x = vals(rng, (24, 200), p, w_enc), vals(rng, (10, 200), q, x_enc)
        W, X = decompose(w, p, w_enc), decompose(x, q, x_enc)
        assert np.array_equal(apmm(W, X, TileConfig(16, 16), kernels=kernels),
                              apmm_planewise(W, X, TileConfig(32, 16), kernels=kernels))


def test_threads_give_same_result(rng):
    w, x = rng.integers(0, 8, (100, 256)), rng.integers(0, 4, (90, 256))
    W, X = decompose(w, 3), decompose(x, 2)
    t1, t4 = TrafficCounter(), TrafficCounter()
    assert np.array_equal(apmm(W, X, TileConfig(16, 16), traffic=t1),
                          apmm(W, X, TileConfig(16, 16), traffic=t4, workers=4))
    assert t1.staged_bits == t4.staged_bits


def test_pack_output_examples():
    out = pack_output(np.array([[7]]), Epilogue(quant=Quantize(1, 2, 2)))
    assert out.bits == 2 and reconstruct(out).tolist() == [[3]]
    out = pack_output(np.array([[0]]), Epilogue(quant=Quantize(0, 1, 1)))
    assert reconstruct(out).tolist() == [[0]]
    with pytest.raises(ValueError):
        pack_output(np.array([[0]]), Epilogue(relu=True))


def test_pack_output_random(rng):
    for _ in range(20):
        y = rng.integers(-500, 500, (6, 9))
        z, s, q = int(rng.integers(-10, 10)), int(rng.integers(1, 50)), int(rng.integers(1, 9))
        expect = np.clip(np.floor_divide(y - z, s), 0, (1 << q) - 1)
        assert pack_output(y, Epilogue(quant=Quantize(z, s, q))) == decompose(expect, q)


def test_routine_fusion_equivalence(rng):
    w, x = rng.integers(0, 4, (40, 256)), rng.integers(0, 4, (24, 256))
    W, X = decompose(w, 2), decompose(x, 2)
    bn = BatchNorm(rng.uniform(0.5, 2, 24), rng.uniform(-3, 3, 24), rng.uniform(0, 500, 24),
                   rng.uniform(1, 100, 24))
    for routine in [Epilogue(quant=Quantize(100, 30, 3)), Epilogue(bn=bn, relu=True, quant=Quantize(0, 0.7, 2)),
                    Epilogue(relu=True), Epilogue(bn=bn)]:
        fused = apmm(W, X, TileConfig(), routine)
        plain = apmm(W, X, TileConfig())
        if routine.quant is not None:
            assert fused == pack_output(plain, routine)
        else:
            assert np.array_equal(fused, reference.epilogue(plain, routine))
    with pytest.raises(ShapeMismatch):
        apmm(W, X, TileConfig(), Epilogue(pool=Pool("max", 2)))


def test_plan_traffic_examples():
    assert plan_traffic(64, 64, 128, 1, 1, TileConfig(64, 64, 128)).per_step_bytes == 2048
    assert plan_traffic(64, 64, 128, 1, 1, TileConfig(16, 128, 128)).per_step_bytes == 2304
    a = plan_traffic(256, 256, 1024, 2, 2, TileConfig(64, 64, 128))
    b = plan_traffic(256, 256, 1024, 2, 2, TileConfig(64, 64, 256))
    assert b.per_step_bytes == 2 * a.per_step_bytes and b.k_steps * 2 == a.k_steps
    assert a.total_bytes == b.total_bytes


def test_instrumented_traffic_matches_plan(rng):
    for M, N, K, p, q in [(64, 64, 512, 1, 2), (20, 37, 300, 3, 1), (8, 128, 1024, 2, 2)]:
        W, X = decompose(rng.integers(0, 1 << p, (M, K)), p), decompose(rng.integers(0, 1 << q, (N, K)), q)
        for cfg in legal_configs((128, 256, 384)):
            t = TrafficCounter()
            apmm(W, X, cfg, traffic=t)
            assert t.bytes_staged == plan_traffic(M, N, K, p, q, cfg).total_bytes, cfg


def test_bigger_tiles_stage_less():
    M = N = 256
    K = 512
    for a in legal_configs((128,)):
        for b in legal_configs((128,)):
            if b.b_m >= a.b_m and b.b_n >= a.b_n and b.b_m * b.b_n > a.b_m * a.b_n:
                assert (plan_traffic(M, N, K, 1, 1, b).total_bytes
                        < plan_traffic(M, N, K, 1, 1, a).total_bytes), (a, b)


@pytest.mark.parametrize("M,N,K", [(8, 8, 128), (20, 37, 300), (64, 128, 512)])
def test_tile_count_scales_with_pq(rng, M, N, K):
    def tiles(p, q):
        W, X = decompose(rng.integers(0, 1 << p, (M, K)), p), decompose(rng.integers(0, 1 << q, (N, K)), q)
        with counters.counting() as ops:
            apmm(W, X, TileConfig(32, 16))
        return ops.bmma_tiles
    base = tiles(1, 1)
    assert base == -(-M // 8) * -(-N // 8) * -(-K // 128)
    for p, q in [(1, 2), (2, 2), (3, 5), (8, 8)]:
        assert tiles(p, q) == p * q * base


def test_errors(rng):
    W = decompose(rng.integers(0, 2, (4, 128)), 1)
    X = decompose(rng.integers(0, 2, (4, 256)), 1)
    with pytest.raises(ShapeMismatch):
        apmm(W, X)
    with pytest.raises(BadTileConfig):
        TileConfig(48, 64)
    with pytest.raises(BadTileConfig):
        TileConfig(64, 64, 100)


def test_tile_config_derived_sizes():
    cfg = TileConfig(64, 32, 256)
    assert (cfg.w_m, cfg.w_n, cfg.w_k) == (16, 16, 256)
    assert str(cfg) == "64x32x256"


def test_accumulator_overflow_is_reported():
    w = np.full((1, 40000), 255)
    with pytest.raises(OverflowError):
        apmm(decompose(w, 8), decompose(w, 8), TileConfig())
