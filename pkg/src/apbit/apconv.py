"""Arbitrary-precision 2-D convolution over channel-major bit planes.

Features are stored NPHWC: for each image and plane, every pixel owns a
contiguous run of ``Cw`` words holding its channels (zero-padded to a
multiple of 128).  Weights are OHWI planes, so the reduction for one output
channel is a single contiguous run of K*K*Cw words, and reduction word r
touches tap r // Cw, channel word r % Cw of the feature map.

Out-of-frame taps read a pad run chosen by the operand encodings.  For
+-1 x +-1 the pad is stored 1 (value +1) and a correction computed from
geometry and per-tap weight sums restores zero-contribution semantics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from apbit import backend, counters
from apbit.apmm import TileConfig, TrafficPlan, _blocks, _scatter, apmm, ceil8, plan_traffic, run_blocks
from apbit.bitplane import (ALIGN_BITS, WORD_BITS, BitPlaneTensor, Encoding, decompose, pack_bits,
                            reconstruct, to_int32, unpack_bits, words_for)
from apbit.bmma import MODE_XOR, kernel_mode
from apbit.counters import TrafficCounter
from apbit.epilogue import Epilogue, fused_epilogue
from apbit.errors import BadLayoutTag, IllegalEncodingPair, ShapeMismatch


@dataclass(frozen=True)
class ConvShape:
    bs: int
    c_in: int
    height: int
    width: int
    c_out: int
    k: int
    stride: int = 1
    pad: int = 0

    def __post_init__(self):
        for name in ("bs", "c_in", "height", "width", "c_out", "k", "stride"):
            if getattr(self, name) <= 0:
                raise ShapeMismatch(f"{name} must be positive")
        if self.pad < 0:
            raise ShapeMismatch("pad must be non-negative")
        if self.out_h <= 0 or self.out_w <= 0:
            raise ShapeMismatch(f"kernel {self.k} with pad {self.pad} leaves no output for "
                                f"{self.height}x{self.width}")

    @property
    def out_h(self) -> int:
        return (self.height + 2 * self.pad - self.k) // self.stride + 1

    @property
    def out_w(self) -> int:
        return (self.width + 2 * self.pad - self.k) // self.stride + 1

    @property
    def c_pad(self) -> int:
        return -(-self.c_in // ALIGN_BITS) * ALIGN_BITS

    @property
    def c_words(self) -> int:
        return self.c_pad // WORD_BITS

    @property
    def pixels(self) -> int:
        return self.bs * self.out_h * self.out_w

    @property
    def reduction(self) -> int:
        """Padded reduction length in bits, K*K*C_pad."""
        return self.k * self.k * self.c_pad


@dataclass(frozen=True)
class ChannelMajorTensor:
    """Feature map (N, H, W, C) as ``words`` of shape (N, P, H, W, Cw)."""

    dims: tuple[int, int, int, int]
    bits: int
    encoding: Encoding
    words: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) != 4 or any(d <= 0 for d in dims):
            raise ShapeMismatch(f"channel-major dims must be 4 positive extents, got {dims}")
        n, h, w, c = dims
        # reuse the BitPlaneTensor checks on the plane-major view
        BitPlaneTensor(dims, self.bits, self.encoding, np.moveaxis(np.asarray(self.words), 1, 0))
        words = np.ascontiguousarray(self.words)
        if words.shape != (n, self.bits, h, w, words_for(c)):
            raise ShapeMismatch(f"words must be (N, P, H, W, Cw), got {words.shape}")
        words.flags.writeable = False
        object.__setattr__(self, "words", words)

    @property
    def channels(self) -> int:
        return self.dims[3]

    @property
    def c_words(self) -> int:
        return self.words.shape[-1]

    def to_bitplane(self) -> BitPlaneTensor:
        return BitPlaneTensor(self.dims, self.bits, self.encoding, np.moveaxis(self.words, 1, 0))

    @classmethod
    def from_bitplane(cls, t: BitPlaneTensor) -> "ChannelMajorTensor":
        return cls(t.dims, t.bits, t.encoding, np.moveaxis(t.planes, 0, 1))

    def __eq__(self, other):
        if not isinstance(other, ChannelMajorTensor):
            return NotImplemented
        return (self.dims == other.dims and self.bits == other.bits
                and self.encoding is other.encoding and np.array_equal(self.words, other.words))

    __hash__ = None


def _to_nhwc(x: np.ndarray, layout: str) -> np.ndarray:
    layout = layout.upper()
    if layout == "NHWC":
        return x
    if layout == "NCHW":
        return np.transpose(x, (0, 2, 3, 1))
    raise BadLayoutTag(f"layout must be NHWC or NCHW, got {layout!r}")


def to_channel_major(x, bits: int, encoding=Encoding.ZERO_ONE, layout: str = "NHWC") -> ChannelMajorTensor:
    """Pack an integer feature map into NPHWC planes."""
    encoding = Encoding.parse(encoding)
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeMismatch(f"feature maps are 4-D, got {x.shape}")
    x = _to_nhwc(x, layout)
    t = decompose(x, bits, encoding)
    return ChannelMajorTensor.from_bitplane(t)


def from_channel_major(t: ChannelMajorTensor, layout: str = "NHWC") -> np.ndarray:
    values = reconstruct(t.to_bitplane())
    layout = layout.upper()
    if layout == "NHWC":
        return values
    if layout == "NCHW":
        return np.ascontiguousarray(np.transpose(values, (0, 3, 1, 2)))
    raise BadLayoutTag(f"layout must be NHWC or NCHW, got {layout!r}")


def conv_weights(w, bits: int, encoding=Encoding.ZERO_ONE) -> BitPlaneTensor:
    """Decompose OIHW integer weights into OHWI planes (C_out, K, K, C_in)."""
    w = np.asarray(w)
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"weights must be (C_out, C_in, K, K), got {w.shape}")
    return decompose(np.transpose(w, (0, 2, 3, 1)), bits, encoding)


def flatten_planes(t: ChannelMajorTensor) -> BitPlaneTensor:
    """Repack (N, H, W, C) planes as (N, H*W*C) rows without decoding values."""
    n, h, w, c = t.dims
    raw = unpack_bits(t.words, c)  # (N, P, H, W, C)
    rows = np.moveaxis(raw, 1, 0).reshape(t.bits, n, h * w * c)
    return BitPlaneTensor((n, h * w * c), t.bits, t.encoding, pack_bits(rows))


class PadStrategy(enum.Enum):
    ZERO_PAD = "zero_pad"
    ONE_PAD_WITH_COUNTER = "one_pad_with_counter"
    ZERO_PAD_SIGNED_WEIGHTS = "zero_pad_signed_weights"


def select_padding(w_enc, x_enc) -> PadStrategy:
    w_enc, x_enc = Encoding.parse(w_enc), Encoding.parse(x_enc)
    if x_enc is Encoding.ZERO_ONE:
        return PadStrategy.ZERO_PAD if w_enc is Encoding.ZERO_ONE else PadStrategy.ZERO_PAD_SIGNED_WEIGHTS
    if w_enc is Encoding.PLUS_MINUS_ONE:
        return PadStrategy.ONE_PAD_WITH_COUNTER
    raise IllegalEncodingPair("{0,1} weights with +-1 features have no zero-contribution pad value")


@dataclass(frozen=True, eq=False)
class PaddingPlan:
    """Padding rule plus per-output-pixel geometry.

    ``outside`` is (OH, OW, K*K), true where a tap falls outside the frame;
    ``counter`` is the number of out-of-frame positions (taps x C_in) per
    pixel, filled only for the counter strategy.
    """

    strategy: PadStrategy
    shape: ConvShape
    outside: np.ndarray
    counter: np.ndarray | None

    @property
    def pad_bit(self) -> int:
        return 1 if self.strategy is PadStrategy.ONE_PAD_WITH_COUNTER else 0

    def pad_run(self) -> np.ndarray:
        """Words an out-of-frame tap reads: pad bits on logical channels only."""
        s = self.shape
        return pack_bits(np.full(s.c_in, self.pad_bit, dtype=np.uint8), s.c_words)

    def correction(self, tap_sums: np.ndarray) -> np.ndarray:
        """(C_out, OH, OW) amount the +1-padded result over-counts.

        ``tap_sums`` is (C_out, K*K), the value-domain weight sum of each tap.
        Channel padding (stored 0 on both sides) adds +1 per padded bit.
        """
        s = self.shape
        if self.strategy is not PadStrategy.ONE_PAD_WITH_COUNTER:
            return np.zeros((s.c_out, s.out_h, s.out_w), dtype=np.int64)
        border = np.einsum("hwt,ot->ohw", self.outside.astype(np.int64), tap_sums.astype(np.int64))
        return border + s.k * s.k * (s.c_pad - s.c_in)


def padding_plan(w_enc, x_enc, shape: ConvShape) -> PaddingPlan:
    strategy = select_padding(w_enc, x_enc)
    k = shape.k
    oh = np.arange(shape.out_h)[:, None, None, None] * shape.stride
    ow = np.arange(shape.out_w)[None, :, None, None] * shape.stride
    kh = np.arange(k)[None, None, :, None]
    kw = np.arange(k)[None, None, None, :]
    ih, iw = oh + kh - shape.pad, ow + kw - shape.pad
    outside = ((ih < 0) | (ih >= shape.height) | (iw < 0) | (iw >= shape.width))
    outside = outside.reshape(shape.out_h, shape.out_w, k * k)
    outside.flags.writeable = False
    counter = None
    if strategy is PadStrategy.ONE_PAD_WITH_COUNTER:
        counter = outside.sum(axis=-1) * shape.c_in
        counter.flags.writeable = False
    return PaddingPlan(strategy, shape, outside, counter)


def tap_sums(W: BitPlaneTensor) -> np.ndarray:
    """(C_out, K*K) value-domain weight sums per tap of 1-bit +-1 weights."""
    c_out, k, _, c_in = W.dims
    ones = np.bitwise_count(W.planes[0]).sum(axis=-1, dtype=np.int64)
    return (2 * ones - c_in).reshape(c_out, k * k)


def im_traffic(shape: ConvShape, p: int, q: int, cfg: TileConfig) -> TrafficPlan:
    """Predicted staging for the conv loop nest: the implied GEMM's plan."""
    return plan_traffic(shape.c_out, shape.pixels, shape.reduction, p, q, cfg)


def _check(W: BitPlaneTensor, X: ChannelMajorTensor, shape: ConvShape) -> None:
    s = shape
    if W.dims != (s.c_out, s.k, s.k, s.c_in):
        raise ShapeMismatch(f"weights {W.dims} do not match (C_out, K, K, C_in) = "
                            f"{(s.c_out, s.k, s.k, s.c_in)}")
    if X.dims != (s.bs, s.height, s.width, s.c_in):
        raise ShapeMismatch(f"features {X.dims} do not match (BS, H, W, C_in) = "
                            f"{(s.bs, s.height, s.width, s.c_in)}")
    # every channel run starts on a word boundary
    if X.words.ctypes.data % 8 or W.planes.ctypes.data % 8:
        raise ShapeMismatch("packed operands must be word aligned")


def apconv(W: BitPlaneTensor, X: ChannelMajorTensor, shape: ConvShape, cfg: TileConfig | None = None,
           routine: Epilogue | None = None, *, traffic: TrafficCounter | None = None,
           method: str = "direct", workers: int = 1, kernels=None):
    """Y[n, oh, ow, o] = sum over taps and channels of W * X, out-of-frame = 0.

    Returns int32 (BS, OH, OW, C_out), or a ChannelMajorTensor when
    ``routine`` quantizes.
    """
    _check(W, X, shape)
    plan = padding_plan(W.encoding, X.encoding, shape)
    p, q = W.bits, X.bits
    if cfg is None:
        from apbit.tuner import autotune
        cfg = autotune(shape.c_out, shape.pixels, shape.reduction, p, q)
    local = TrafficCounter()
    if method == "direct":
        y = _direct(W, X, shape, cfg, plan, local, workers, kernels or backend.kernels)
    elif method == "im2col":
        y = _im2col(W, X, shape, cfg, plan, local, kernels)
    else:
        raise ValueError(f"method must be 'direct' or 'im2col', got {method!r}")

    elements = y.size
    if routine is None:
        result = y
        local.write(32 * elements, "int32", "apconv")
    else:
        out = fused_epilogue(y, routine)
        if routine.quant is None:
            result = out
            local.write(32 * out.size, "int32", "apconv")
        else:
            result = to_channel_major(out, routine.quant.bits)
            local.write(routine.quant.bits * out.size, "packed", "apconv")
    if traffic is not None:
        traffic.merge(local)
    return result


def _direct(W, X, shape, cfg, plan, local, workers, kernels) -> np.ndarray:
    s = shape
    mode = kernel_mode(W.encoding, X.encoding)
    wt = W.planes
    x = X.words
    pad_run = plan.pad_run()
    co8, pix8 = ceil8(s.c_out), ceil8(s.pixels)
    red_words = s.k * s.k * s.c_words
    step = cfg.step_words

    def block(bounds):
        r0, r1, c0, c1 = bounds
        acc = np.zeros((r1 - r0, c1 - c0), dtype=np.int32)
        tiles = staged = 0
        for k0 in range(0, red_words, step):
            k1 = min(k0 + step, red_words)
            staged += (r1 - r0 + c1 - c0) * (k1 - k0) * WORD_BITS
            tiles += kernels.conv_block(wt, x, pad_run, acc, r0, r1, c0, c1, k0, k1,
                                        co8, pix8, s.out_h, s.out_w, s.stride, s.pad, mode)
        return bounds, acc, tiles, staged

    y = np.zeros((s.c_out, s.pixels), dtype=np.int64)
    tiles = combined = 0
    for (r0, _, c0, _), acc, t, staged in run_blocks(block, _blocks(W.bits * co8, X.bits * pix8, cfg), workers):
        tiles += t
        local.stage(staged)
        combined += _scatter(y, acc, r0, c0, co8, pix8)
    counters.record(bmma_tiles=tiles, combine=combined)
    y = y.reshape(s.c_out, s.bs, s.out_h, s.out_w)
    if mode == MODE_XOR:
        y -= plan.correction(tap_sums(W))[:, None]
    return to_int32(np.transpose(y, (1, 2, 3, 0)))


def _im2col(W, X, shape, cfg, plan, local, kernels) -> np.ndarray:
    """Second route: lower to a patch matrix in the value domain and call apmm.

    Out-of-frame patch entries hold the pad value (0, or +1 for the counter
    strategy) and the same correction is applied afterwards.
    """
    s = shape
    xv = reconstruct(X.to_bitplane()).astype(np.int64)
    wv = reconstruct(W).astype(np.int64).reshape(s.c_out, s.k * s.k * s.c_in)
    fill = 1 if plan.strategy is PadStrategy.ONE_PAD_WITH_COUNTER else 0
    padded = np.full((s.bs, s.height + 2 * s.pad, s.width + 2 * s.pad, s.c_in), fill, dtype=np.int64)
    padded[:, s.pad: s.pad + s.height, s.pad: s.pad + s.width] = xv
    cols = np.empty((s.bs, s.out_h, s.out_w, s.k, s.k, s.c_in), dtype=np.int64)
    for kh in range(s.k):
        for kw in range(s.k):
            cols[:, :, :, kh, kw] = padded[:, kh: kh + s.stride * s.out_h: s.stride,
                                           kw: kw + s.stride * s.out_w: s.stride]
    cols = cols.reshape(s.pixels, -1)
    inner = TrafficCounter()
    y = apmm(decompose(wv, W.bits, W.encoding), decompose(cols, X.bits, X.encoding), cfg,
             traffic=inner, kernels=kernels).astype(np.int64)
    local.stage(inner.staged_bits)
    # y is (C_out, pixels); apmm already removed channel padding
    y = y.reshape(s.c_out, s.bs, s.out_h, s.out_w)
    if plan.strategy is PadStrategy.ONE_PAD_WITH_COUNTER:
        y -= np.einsum("hwt,ot->ohw", plan.outside.astype(np.int64), tap_sums(W))[:, None]
    return to_int32(np.transpose(y, (1, 2, 3, 0)))
