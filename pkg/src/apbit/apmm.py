"""Arbitrary-precision matrix multiplication on 1-bit planes.

``W`` (M x K, p planes) and ``X`` (N x K, q planes, i.e. B pre-transposed)
are virtually batched into a pM x K by qN x K binary product.  The output
grid is cut into b_m x b_n blocks; each block keeps a private int32
accumulator for its whole K loop, stages b_m x b_k and b_n x b_k bits per
step, and reduces into Y with weight 2^(s+t) once the loop ends.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from apbit import backend, counters
from apbit.bitplane import BitPlaneTensor, Encoding, WORD_BITS, combine, decompose, to_int32
from apbit.bmma import MODE_XOR, kernel_mode
from apbit.counters import TrafficCounter
from apbit.epilogue import Epilogue, fused_epilogue
from apbit.errors import BadTileConfig, ShapeMismatch

BLOCK_SIZES = (16, 32, 64, 128)


def ceil8(n: int) -> int:
    return -(-n // 8) * 8


@dataclass(frozen=True)
class TileConfig:
    b_m: int = 64
    b_n: int = 64
    b_k: int = 128

    def __post_init__(self):
        if self.b_m not in BLOCK_SIZES or self.b_n not in BLOCK_SIZES:
            raise BadTileConfig(f"b_m, b_n must be in {BLOCK_SIZES}, got {self.b_m}, {self.b_n}")
        if self.b_k <= 0 or self.b_k % 128:
            raise BadTileConfig(f"b_k must be a positive multiple of 128, got {self.b_k}")

    @property
    def w_m(self) -> int:
        return self.b_m // 4

    @property
    def w_n(self) -> int:
        return self.b_n // 2

    @property
    def w_k(self) -> int:
        return self.b_k

    @property
    def step_words(self) -> int:
        return self.b_k // WORD_BITS

    def __str__(self) -> str:
        return f"{self.b_m}x{self.b_n}x{self.b_k}"


def legal_configs(b_ks=(128, 256)) -> list[TileConfig]:
    return [TileConfig(m, n, k) for m in BLOCK_SIZES for n in BLOCK_SIZES for k in b_ks]


@dataclass(frozen=True)
class TrafficPlan:
    per_step_bytes: int
    k_steps: int
    blocks_m: int
    blocks_n: int
    total_bytes: int


def plan_traffic(M: int, N: int, K: int, p: int, q: int, cfg: TileConfig) -> TrafficPlan:
    """Predicted staged reads: (b_m b_k + b_n b_k)/8 bytes per block step.

    Edge blocks and a short final K step stage only what they cover, so the
    total is K_pad/8 * (blocks_n * pM8 + blocks_m * qN8).
    """
    rows, cols = p * ceil8(M), q * ceil8(N)
    k_pad = -(-K // 128) * 128
    nbm, nbn = -(-rows // cfg.b_m), -(-cols // cfg.b_n)
    total_bits = k_pad * (nbn * rows + nbm * cols)
    return TrafficPlan(
        per_step_bytes=(cfg.b_m + cfg.b_n) * cfg.b_k // 8,
        k_steps=-(-k_pad // cfg.b_k),
        blocks_m=nbm,
        blocks_n=nbn,
        total_bytes=total_bits // 8,
    )


def _blocks(rows: int, cols: int, cfg: TileConfig):
    return [(r0, min(r0 + cfg.b_m, rows), c0, min(c0 + cfg.b_n, cols))
            for r0 in range(0, rows, cfg.b_m) for c0 in range(0, cols, cfg.b_n)]


def run_blocks(block_fn, blocks, workers: int = 1):
    """Run independent output blocks, serially or on a thread pool."""
    if workers <= 1 or len(blocks) < 2:
        return [block_fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(block_fn, blocks))


def _scatter(y: np.ndarray, acc: np.ndarray, r0: int, c0: int, m8: int, n8: int) -> int:
    """Reduce a block accumulator into Y with weight 2^(s+t); returns element count."""
    m, n = y.shape
    rows, cols = acc.shape
    done = 0
    v = r0
    while v < r0 + rows:
        s, i0 = divmod(v, m8)
        v_end = min(r0 + rows, (s + 1) * m8)
        i1 = min(i0 + (v_end - v), m)
        u = c0
        while u < c0 + cols:
            t, j0 = divmod(u, n8)
            u_end = min(c0 + cols, (t + 1) * n8)
            j1 = min(j0 + (u_end - u), n)
            if i1 > i0 and j1 > j0:
                part = acc[v - r0: v - r0 + (i1 - i0), u - c0: u - c0 + (j1 - j0)]
                y[i0:i1, j0:j1] += part.astype(np.int64) << (s + t)
                done += part.size
            u = u_end
        v = v_end
    return done


def _check_operands(W: BitPlaneTensor, X: BitPlaneTensor) -> None:
    if len(W.dims) != 2 or len(X.dims) != 2:
        raise ShapeMismatch("apmm operands must be matrices")
    if W.length != X.length or W.words != X.words:
        raise ShapeMismatch(f"inner dimensions differ: {W.length} vs {X.length}")


def apmm(W: BitPlaneTensor, X: BitPlaneTensor, cfg: TileConfig | None = None,
         routine: Epilogue | None = None, *, traffic: TrafficCounter | None = None,
         workers: int = 1, kernels=None):
    """Y[i, j] = sum_k W[i, k] * X[j, k] over decoded values.

    Returns int32 (M, N), or a packed BitPlaneTensor when ``routine``
    quantizes.  ``cfg`` defaults to the auto-tuned config.
    """
    _check_operands(W, X)
    kernels = kernels or backend.kernels
    mode = kernel_mode(W.encoding, X.encoding)
    M, K = W.dims
    N = X.dims[0]
    p, q = W.bits, X.bits
    if cfg is None:
        from apbit.tuner import autotune
        cfg = autotune(M, N, K, p, q)
    if routine is not None and routine.pool is not None:
        raise ShapeMismatch("pooling needs spatial structure; use apconv")

    m8, n8 = ceil8(M), ceil8(N)
    a = W.matrix_planes()
    b = X.matrix_planes()
    wd = W.words
    step = cfg.step_words

    def block(bounds):
        r0, r1, c0, c1 = bounds
        acc = np.zeros((r1 - r0, c1 - c0), dtype=np.int32)
        tiles = staged = 0
        for w0 in range(0, wd, step):
            w1 = min(w0 + step, wd)
            staged += (r1 - r0 + c1 - c0) * (w1 - w0) * WORD_BITS
            tiles += kernels.gemm_block(a, b, acc, r0, r1, c0, c1, w0, w1, m8, n8, mode)
        return bounds, acc, tiles, staged

    y = np.zeros((M, N), dtype=np.int64)
    tiles = combined = 0
    local = TrafficCounter()
    for (r0, _, c0, _), acc, t, staged in run_blocks(block, _blocks(p * m8, q * n8, cfg), workers):
        tiles += t
        local.stage(staged)
        combined += _scatter(y, acc, r0, c0, m8, n8)
    if mode == MODE_XOR:
        # padded positions are stored 0 in both operands and each added +1
        y -= wd * WORD_BITS - K
    counters.record(bmma_tiles=tiles, combine=combined)
    out = to_int32(y)

    if routine is None:
        local.write(32 * M * N, "int32", "apmm")
        result = out
    else:
        result = _pack(fused_epilogue(out, routine), routine)
        local.write(result.bits * M * N if isinstance(result, BitPlaneTensor) else 32 * M * N,
                    "packed" if isinstance(result, BitPlaneTensor) else "int32", "apmm")
    if traffic is not None:
        traffic.merge(local)
    return result


def _pack(values: np.ndarray, routine: Epilogue):
    if routine.quant is None:
        return values
    return decompose(values, routine.quant.bits, Encoding.ZERO_ONE)


def pack_output(Y: np.ndarray, routine: Epilogue) -> BitPlaneTensor:
    """Quantize 32-bit values and split them into packed planes."""
    if routine.quant is None:
        raise ValueError("pack_output needs a routine that quantizes")
    return _pack(fused_epilogue(np.asarray(Y, dtype=np.int32), routine), routine)


def apmm_planewise(W: BitPlaneTensor, X: BitPlaneTensor, cfg: TileConfig | None = None,
                   *, kernels=None) -> np.ndarray:
    """p*q separate plane GEMMs, then :func:`combine`; the unbatched route."""
    _check_operands(W, X)
    kernels = kernels or backend.kernels
    cfg = cfg or TileConfig()
    mode = kernel_mode(W.encoding, X.encoding)
    M, K = W.dims
    N = X.dims[0]
    m8, n8 = ceil8(M), ceil8(N)
    a_all, b_all = W.matrix_planes(), X.matrix_planes()
    wd = W.words
    parts = {}
    tiles = 0
    for s in range(W.bits):
        for t in range(X.bits):
            a, b = a_all[s: s + 1], b_all[t: t + 1]
            y = np.zeros((m8, n8), dtype=np.int64)
            for r0, r1, c0, c1 in _blocks(m8, n8, cfg):
                acc = np.zeros((r1 - r0, c1 - c0), dtype=np.int32)
                for w0 in range(0, wd, cfg.step_words):
                    tiles += kernels.gemm_block(a, b, acc, r0, r1, c0, c1, w0,
                                                min(w0 + cfg.step_words, wd), m8, n8, mode)
                y[r0:r1, c0:c1] = acc
            if mode == MODE_XOR:
                y -= wd * WORD_BITS - K
            parts[(s, t)] = y[:M, :N]
    counters.record(bmma_tiles=tiles)
    return combine(parts, W.bits, X.bits)


def reference_gemm(w_int, x_int) -> np.ndarray:
    """Plain integer GEMM, Y = W X^T, used as the native int4/int8 stand-in."""
    w = np.asarray(w_int, dtype=np.int64)
    x = np.asarray(x_int, dtype=np.int64)
    if w.ndim != 2 or x.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"cannot multiply {w.shape} by {x.shape}^T")
    return to_int32(w @ x.T)
