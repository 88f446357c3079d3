import numpy as np
import pytest

from apbit import reference
from apbit.epilogue import (BatchNorm, Epilogue, Pool, Quantize, bn_apply, finalize, fused_epilogue, pool,
                            quantize, run_stages)
from apbit.errors import QuantRangeError, ValueOutOfRange


def test_bn_apply_examples():
    assert bn_apply(7, 3.0, 1.5, 7, 2.0) == 1.5
    assert bn_apply(13, 1.0, 0.0, 0.0, 1 - 1e-5, 1e-5) == pytest.approx(13)
    assert bn_apply(10, 2.0, 1.0, 2.0, 4.0) == 9.0


def test_scalar_examples():
    assert fused_epilogue(-5, Epilogue(relu=True)) == 0
    assert fused_epilogue(7, Epilogue(quant=Quantize(1, 2, 2))) == 3
    assert fused_epilogue(-7, Epilogue(quant=Quantize(0, 2, 8, clamp=True))) == 0


def test_quantize_floors_toward_negative_infinity():
    q = Quantize(0, 2, 8, clamp=False)
    assert quantize(np.array([5]), q).tolist() == [2]
    with pytest.raises(QuantRangeError):
        quantize(np.array([-1]), q)
    assert quantize(np.array([-1.5]), Quantize(-4, 1.0, 3)).tolist() == [2]


def test_quantize_clamps():
    q = Quantize(0, 1, 2)
    assert quantize(np.array([-3, 0, 3, 9]), q).tolist() == [0, 0, 3, 3]


def test_invalid_parameters():
    with pytest.raises(ValueOutOfRange):
        Quantize(0, 0, 2)
    with pytest.raises(ValueOutOfRange):
        Quantize(0, 1, 9)
    with pytest.raises(ValueOutOfRange):
        BatchNorm(1.0, 0.0, 0.0, -1.0)
    with pytest.raises(ValueError):
        Pool("median", 2)
    with pytest.raises(ValueOutOfRange):
        fused_epilogue(np.array([1.5]), Epilogue(relu=True))


def test_full_chain_matches_unfused_oracle(rng):
    for _ in range(30):
        x = rng.integers(-2000, 2000, (2, 4, 4, 3)).astype(np.int32)
        bn = BatchNorm(rng.uniform(0.1, 3, 3), rng.uniform(-5, 5, 3), rng.uniform(-100, 100, 3),
                       rng.uniform(1, 500, 3))
        ep = Epilogue(bn=bn, relu=True, pool=Pool("avg", 2), quant=Quantize(float(rng.uniform(0, 3)), 4.0, 3))
        fused = fused_epilogue(x, ep)
        stages = list(run_stages(x, ep))
        assert [s for s, _ in stages] == ["bn", "relu", "pool", "quant"]
        assert np.array_equal(fused, stages[-1][1])
        assert np.array_equal(fused, reference.epilogue(x, ep))


def test_fused_scalar_formula_for_nonnegative_zero_point(rng):
    # floor(max(BN(x) - z, 0) / s) under the fixed order BN -> ReLU -> quantize
    for _ in range(200):
        x = int(rng.integers(-1000, 1000))
        g, b, m, v = rng.uniform(0.1, 2), rng.uniform(-5, 5), rng.uniform(-50, 50), rng.uniform(1, 50)
        z, s = float(rng.uniform(0, 10)), float(rng.uniform(0.5, 8))
        ep = Epilogue(bn=BatchNorm(g, b, m, v, 0.0), relu=True, quant=Quantize(z, s, 8))
        direct = int(np.floor(max((x - m) / np.sqrt(v) * g + b - z, 0) / s))
        assert fused_epilogue(x, ep) == min(direct, 255)


def test_pooling_against_scalar_oracle(rng):
    for kind in ("avg", "max"):
        for k in (2, 3):
            x = rng.integers(-100, 100, (2, 7, 6, 3))
            assert np.array_equal(pool(x, Pool(kind, k)), reference.pool(x, kind, k))
    assert pool(np.array([[[[1], [2]], [[3], [-7]]]]), Pool("avg", 2)).ravel().tolist() == [-1]


def test_max_pool_is_order_independent(rng):
    x = rng.integers(-50, 50, (1, 4, 4, 2))
    flipped = x[:, ::-1, ::-1, :]
    a = pool(x, Pool("max", 4))
    b = pool(flipped, Pool("max", 4))
    assert np.array_equal(a, b)


def test_output_layer_bn_preserves_argmax(rng):
    for _ in range(50):
        logits = rng.integers(-5000, 5000, (4, 10))
        bn = BatchNorm(1.7, 0.25, 3.0, 2.0)
        ints = fused_epilogue(logits, Epilogue(bn=bn))
        exact = (logits - 3.0) / np.sqrt(2.0 + 1e-5) * 1.7 + 0.25
        assert np.array_equal(np.argmax(ints, axis=1), np.argmax(exact, axis=1))


def test_finalize_floors():
    assert finalize(np.array([-0.5, 2.7])).tolist() == [-1, 2]


def test_stage_names():
    assert [s for s, _ in Epilogue().stages] == ["round"]
    assert Epilogue().empty and not Epilogue(relu=True).empty
    assert Epilogue(quant=Quantize(bits=3)).out_bits == 3
