"""Element-wise epilogues applied to 32-bit accumulator outputs.

Order is fixed: BN -> ReLU -> Pool -> Quantize.  Integer inputs stay exact
(floor division for average pooling and integer quantizers); once BN has run
values are float64 and the only rounding is the final floor.  Channels are
the last axis; pooling uses the two axes before it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from apbit.bitplane import to_int32
from apbit.errors import QuantRangeError, ShapeMismatch, ValueOutOfRange


def _param(value) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        for name in ("gamma", "beta", "mean", "var"):
            object.__setattr__(self, name, _param(getattr(self, name)))
        if np.any(self.var + self.eps <= 0):
            raise ValueOutOfRange("var + eps must be positive")

    @property
    def channels(self) -> int | None:
        sizes = {a.size for a in (self.gamma, self.beta, self.mean, self.var) if a.ndim}
        if len(sizes) > 1:
            raise ShapeMismatch("BN parameter vectors differ in length")
        return sizes.pop() if sizes else None


@dataclass(frozen=True)
class Pool:
    kind: str
    k: int

    def __post_init__(self):
        if self.kind not in ("avg", "max"):
            raise ValueError(f"pool kind must be 'avg' or 'max', got {self.kind!r}")
        if self.k < 1:
            raise ValueError("pool grid must be positive")


@dataclass(frozen=True)
class Quantize:
    zero_point: int = 0
    scale: float = 1.0
    bits: int = 2
    clamp: bool = True

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueOutOfRange("quantization scale must be positive")
        if not 1 <= self.bits <= 8:
            raise ValueOutOfRange("quantization bits must be in [1, 8]")

    @property
    def exact_integer(self) -> bool:
        return float(self.zero_point).is_integer() and float(self.scale).is_integer()


@dataclass(frozen=True, eq=False)
class Epilogue:
    """Optional BN, ReLU, pooling and quantization, applied in that order."""

    bn: BatchNorm | None = None
    relu: bool = False
    pool: Pool | None = None
    quant: Quantize | None = None
    stages: tuple = field(init=False, repr=False)

    def __post_init__(self):
        stages = []
        if self.bn is not None:
            stages.append(("bn", lambda v: batch_norm(v, self.bn)))
        if self.relu:
            stages.append(("relu", relu))
        if self.pool is not None:
            stages.append(("pool", lambda v: pool(v, self.pool)))
        if self.quant is not None:
            stages.append(("quant", lambda v: quantize(v, self.quant)))
        else:
            stages.append(("round", finalize))
        object.__setattr__(self, "stages", tuple(stages))

    @property
    def empty(self) -> bool:
        return self.bn is None and not self.relu and self.pool is None and self.quant is None

    @property
    def out_bits(self) -> int | None:
        return None if self.quant is None else self.quant.bits


# alias used by callers that think of it as apmm's element-wise hook
ElementRoutine = Epilogue


def bn_apply(x, gamma, beta, mean, var, eps=0.0) -> float:
    """(x - mean) / sqrt(var + eps) * gamma + beta in double precision."""
    return (np.float64(x) - mean) / np.sqrt(np.float64(var) + eps) * gamma + beta


def batch_norm(v: np.ndarray, bn: BatchNorm) -> np.ndarray:
    return bn_apply(np.asarray(v), bn.gamma, bn.beta, bn.mean, bn.var, bn.eps)


def relu(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    return np.maximum(v, v.dtype.type(0))


def pool(v: np.ndarray, spec: Pool) -> np.ndarray:
    """Non-overlapping k x k pooling over axes (-3, -2); remainders dropped."""
    v = np.asarray(v)
    if v.ndim < 3:
        raise ShapeMismatch("pooling needs (..., H, W, C) input")
    k = spec.k
    h, w = v.shape[-3] // k, v.shape[-2] // k
    if h == 0 or w == 0:
        raise ShapeMismatch(f"pool grid {k} larger than the feature map {v.shape[-3:-1]}")
    v = v[..., : h * k, : w * k, :]
    if spec.kind == "max":
        # running maximum over the k*k strided offsets; exact and far faster
        # than reducing a 6-D strided view
        out = v[..., ::k, ::k, :].copy()
        for i in range(k):
            for j in range(k):
                if i or j:
                    np.maximum(out, v[..., i::k, j::k, :], out=out)
        return out
    windows = v.reshape(*v.shape[:-3], h, k, w, k, v.shape[-1])
    total = windows.sum(axis=(-4, -2))
    if np.issubdtype(total.dtype, np.integer):
        return np.floor_divide(total, k * k)
    return total / (k * k)


def quantize(v: np.ndarray, q: Quantize) -> np.ndarray:
    """floor((v - z) / s), clamped into [0, 2^bits - 1]."""
    v = np.asarray(v)
    if np.issubdtype(v.dtype, np.integer) and q.exact_integer:
        out = np.floor_divide(v.astype(np.int64) - int(q.zero_point), int(q.scale))
    else:
        out = np.floor((v.astype(np.float64) - q.zero_point) / q.scale)
    top = (1 << q.bits) - 1
    if q.clamp:
        out = np.clip(out, 0, top)
    elif out.size and (out.min() < 0 or out.max() > top):
        raise QuantRangeError(f"quantized values leave [0, {top}]")
    return out.astype(np.int32)


def finalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v)
    if np.issubdtype(v.dtype, np.floating):
        v = np.floor(v).astype(np.int64)
    return to_int32(v)


def fused_epilogue(x, spec: Epilogue):
    """Apply the whole chain in one pass; no intermediate leaves this call."""
    scalar = np.ndim(x) == 0
    v = np.asarray(x)
    if not np.issubdtype(v.dtype, np.integer):
        raise ValueOutOfRange("epilogues consume integer accumulators")
    if scalar or v.size == 0:
        for _, fn in spec.stages:
            v = fn(v)
        return v.item() if scalar else v
    return _fused_inplace(v, spec)


def _fused_inplace(v: np.ndarray, spec: Epilogue) -> np.ndarray:
    # same IEEE operations in the same order as the staged form, but every
    # step after the first writes into one working buffer
    owned = False
    if spec.bn is not None:
        b = spec.bn
        v = v.astype(np.float64)
        v -= b.mean
        v /= np.sqrt(np.asarray(b.var, dtype=np.float64) + b.eps)
        v *= b.gamma
        v += b.beta
        owned = True
    if spec.relu:
        if owned:
            np.maximum(v, v.dtype.type(0), out=v)
        else:
            v = relu(v)
            owned = True
    if spec.pool is not None:
        v = pool(v, spec.pool)
        owned = True
    q = spec.quant
    if q is None:
        return finalize(v)
    if np.issubdtype(v.dtype, np.integer) or not owned:
        return quantize(v, q)
    v -= q.zero_point
    v /= q.scale
    np.floor(v, out=v)
    top = (1 << q.bits) - 1
    if q.clamp:
        np.clip(v, 0, top, out=v)
    elif v.min() < 0 or v.max() > top:
        raise QuantRangeError(f"quantized values leave [0, {top}]")
    return v.astype(np.int32)


def run_stages(x, spec: Epilogue):
    """Unfused form: yields ``(stage, materialized tensor)`` after each pass."""
    v = np.asarray(x)
    for name, fn in spec.stages:
        v = np.array(fn(v), copy=True)
        yield name, v
