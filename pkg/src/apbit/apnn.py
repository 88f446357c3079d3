"""Layer graphs over packed activations, with or without epilogue fusion.

A model takes an 8-bit image, optionally quantizes it to the first layer's
activation width, and then runs conv / fully-connected / pool layers.  Every
hidden layer ends in a quantizer, so activations cross layer boundaries only
as packed q-bit planes; the output layer returns int32 logits.

With ``fusion=False`` each kernel instead writes its 32-bit result, and BN,
ReLU, pooling, quantization and packing run as separate passes that each
read and write a full tensor.  Both paths give bit-identical logits.
"""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, field

import numpy as np

from apbit import reference
from apbit.apconv import ChannelMajorTensor, ConvShape, apconv, conv_weights, flatten_planes, im_traffic
from apbit.apmm import apmm, plan_traffic
from apbit.bitplane import BitPlaneTensor, Encoding, decompose, reconstruct, to_int32
from apbit.counters import TrafficCounter
from apbit.epilogue import BatchNorm, Epilogue, Pool, Quantize, pool, quantize, run_stages
from apbit.errors import GraphShapeError, UnsupportedLayer
from apbit.tuner import autotune

KINDS = ("conv", "fc", "pool", "output")
FULL_BITS = 32


@dataclass(frozen=True, eq=False)
class LayerSpec:
    """One layer.

    ``weights`` is pre-decomposed: (C_out, K, K, C_in) planes for conv and
    (out, in) planes for fc/output.  ``pool`` layers use ``pool_spec`` and
    carry no weights.
    """

    kind: str
    weights: BitPlaneTensor | None = None
    stride: int = 1
    pad: int = 0
    epilogue: Epilogue = field(default_factory=Epilogue)
    pool_spec: Pool | None = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnsupportedLayer(f"unknown layer kind {self.kind!r}")
        if self.kind == "pool":
            if self.pool_spec is None or self.weights is not None:
                raise GraphShapeError("pool layers take a pool_spec and no weights")
        elif self.weights is None:
            raise GraphShapeError(f"{self.kind} layer needs weights")
        elif self.kind == "conv" and len(self.weights.dims) != 4:
            raise GraphShapeError("conv weights must be (C_out, K, K, C_in) planes")
        elif self.kind in ("fc", "output") and len(self.weights.dims) != 2:
            raise GraphShapeError(f"{self.kind} weights must be (out, in) planes")

    @classmethod
    def conv(cls, w_oihw, bits: int, encoding=Encoding.ZERO_ONE, stride=1, pad=0, epilogue=None, name=""):
        return cls("conv", conv_weights(w_oihw, bits, encoding), stride, pad, epilogue or Epilogue(), name=name)

    @classmethod
    def fc(cls, w, bits: int, encoding=Encoding.ZERO_ONE, epilogue=None, name=""):
        return cls("fc", decompose(w, bits, encoding), epilogue=epilogue or Epilogue(), name=name)

    @classmethod
    def output(cls, w, bits: int, encoding=Encoding.ZERO_ONE, epilogue=None, name=""):
        return cls("output", decompose(w, bits, encoding), epilogue=epilogue or Epilogue(), name=name)

    @classmethod
    def pooling(cls, kind: str, k: int, name=""):
        return cls("pool", pool_spec=Pool(kind, k), name=name)

    @property
    def out_channels(self) -> int:
        return self.weights.dims[0]


@dataclass(frozen=True)
class LayerShape:
    in_shape: tuple
    out_shape: tuple
    in_bits: int
    out_bits: int | None
    conv: ConvShape | None = None


@dataclass(frozen=True, eq=False)
class ModelGraph:
    input_shape: tuple
    layers: tuple
    input_quant: Quantize | None = None
    name: str = "model"
    shapes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "shapes", tuple(_infer(self)))


def _label(i: int, layer: LayerSpec) -> str:
    return layer.name or f"{layer.kind}{i}"


def _check_epilogue(i, layer, channels, last):
    ep = layer.epilogue
    where = f"layer {i} ({_label(i, layer)})"
    if ep.bn is not None and ep.bn.channels not in (None, channels):
        raise GraphShapeError(f"{where}: BN has {ep.bn.channels} channels, output has {channels}")
    if last:
        if ep.quant is not None or ep.pool is not None:
            raise GraphShapeError(f"{where}: the output layer takes no pooling or quantization")
    elif ep.quant is None:
        raise GraphShapeError(f"{where}: hidden layers must end in quantization")


def _infer(g: ModelGraph):
    shape = g.input_shape
    if len(shape) not in (2, 4) or any(d <= 0 for d in shape):
        raise GraphShapeError(f"input shape must be (N, F) or (N, H, W, C), got {shape}")
    bits = g.input_quant.bits if g.input_quant is not None else 8
    if not g.layers:
        raise GraphShapeError("a model needs at least one layer")
    out = []
    for i, layer in enumerate(g.layers):
        last = i == len(g.layers) - 1
        if (layer.kind == "output") != last:
            raise GraphShapeError(f"layer {i}: exactly the last layer must be the output layer")
        if layer.kind != "pool" and layer.weights.encoding is Encoding.PLUS_MINUS_ONE and layer.weights.bits != 1:
            raise GraphShapeError(f"layer {i}: +-1 weights must be 1-bit")
        conv = None
        if layer.kind == "conv":
            if len(shape) != 4:
                raise GraphShapeError(f"layer {i}: conv needs a 4-D input, got {shape}")
            c_out, k, _, c_in = layer.weights.dims
            if c_in != shape[3]:
                raise GraphShapeError(f"layer {i}: conv expects {c_in} channels, input has {shape[3]}")
            try:
                conv = ConvShape(shape[0], c_in, shape[1], shape[2], c_out, k, layer.stride, layer.pad)
            except ValueError as exc:
                raise GraphShapeError(f"layer {i}: {exc}") from None
            new = (shape[0], conv.out_h, conv.out_w, c_out)
            if layer.epilogue.pool is not None:
                k_p = layer.epilogue.pool.k
                new = (new[0], new[1] // k_p, new[2] // k_p, c_out)
            _check_epilogue(i, layer, c_out, last)
        elif layer.kind in ("fc", "output"):
            features = int(np.prod(shape[1:]))
            n_out, n_in = layer.weights.dims
            if n_in != features:
                raise GraphShapeError(f"layer {i}: {layer.kind} expects {n_in} inputs, got {features}")
            if layer.epilogue.pool is not None:
                raise GraphShapeError(f"layer {i}: pooling needs a spatial output")
            _check_epilogue(i, layer, n_out, last)
            new = (shape[0], n_out)
        else:
            if len(shape) != 4:
                raise GraphShapeError(f"layer {i}: pooling needs a 4-D input")
            k_p = layer.pool_spec.k
            new = (shape[0], shape[1] // k_p, shape[2] // k_p, shape[3])
        if any(d <= 0 for d in new):
            raise GraphShapeError(f"layer {i}: output shape {new} is empty")
        if layer.kind == "pool":
            out_bits = bits
        else:
            out_bits = layer.epilogue.quant.bits if layer.epilogue.quant is not None else None
        out.append(LayerShape(shape, new, bits, out_bits, conv))
        shape, bits = new, out_bits
    return out


@dataclass
class LayerReport:
    name: str
    kind: str
    seconds: float
    read_bits: int
    written_bits: int
    staged_bits: int
    interlayer_bits: int

    @property
    def main_bits(self) -> int:
        return self.read_bits + self.written_bits


@dataclass
class ModelRun:
    logits: np.ndarray
    layers: list
    traffic: TrafficCounter
    fusion: bool

    @property
    def seconds(self) -> float:
        return sum(r.seconds for r in self.layers)


def _pack_input(g: ModelGraph, image, traffic: TrafficCounter):
    x = np.asarray(image)
    if x.shape != g.input_shape:
        raise GraphShapeError(f"input has shape {x.shape}, model expects {g.input_shape}")
    if not np.issubdtype(x.dtype, np.integer) or x.min() < 0 or x.max() > 255:
        raise GraphShapeError("model input must be an 8-bit unsigned image")
    traffic.read(8 * x.size)
    bits = 8
    if g.input_quant is not None:
        x = quantize(x, g.input_quant)
        bits = g.input_quant.bits
    traffic.write(bits * x.size, "packed", "input")
    t = decompose(x, bits)
    return ChannelMajorTensor.from_bitplane(t) if x.ndim == 4 else t


def _as_rows(act) -> BitPlaneTensor:
    return flatten_planes(act) if isinstance(act, ChannelMajorTensor) else act


def _decode(act) -> np.ndarray:
    if isinstance(act, ChannelMajorTensor):
        return reconstruct(act.to_bitplane())
    return reconstruct(act)


def _repack(values: np.ndarray, bits: int):
    t = decompose(values, bits)
    return ChannelMajorTensor.from_bitplane(t) if values.ndim == 4 else t


def _act_bits(act) -> int:
    return act.bits * int(np.prod(act.dims))


def _kernel(layer: LayerSpec, shape: LayerShape, act, routine, traffic, workers):
    if act.encoding is not Encoding.ZERO_ONE:
        raise UnsupportedLayer("activations must be {0,1}-encoded")
    if layer.kind == "conv":
        W = layer.weights
        cfg = autotune(shape.conv.c_out, shape.conv.pixels, shape.conv.reduction, W.bits, act.bits)
        return apconv(W, act, shape.conv, cfg, routine, traffic=traffic, workers=workers)
    rows = _as_rows(act)
    # activations are the left operand (M = batch); weights are the right
    return apmm(rows, layer.weights, None, routine, traffic=traffic, workers=workers)


def _unfused_epilogue(y, ep: Epilogue, traffic: TrafficCounter, label: str):
    """Run each stage as its own pass; returns (result, bits fed to quantize)."""
    if ep.empty:
        return y, 0
    fed = 0
    v = y
    for stage, out in run_stages(y, ep):
        traffic.read(FULL_BITS * np.size(v))
        if stage == "quant":
            fed = FULL_BITS * np.size(v)
        traffic.write(FULL_BITS * out.size, "int32" if stage != "bn" else "float", f"{label}:{stage}")
        v = out
    if ep.quant is not None:
        traffic.read(FULL_BITS * v.size)
        v = _repack(v, ep.quant.bits)
        traffic.write(_act_bits(v), "packed", f"{label}:pack")
    return v, fed


def run_model_detailed(g: ModelGraph, image, *, fusion: bool = True, workers: int = 1) -> ModelRun:
    total = TrafficCounter()
    reports = []
    start = time.perf_counter()
    act = _pack_input(g, image, total)
    reports.append(LayerReport("input", "input", time.perf_counter() - start, total.read_main_bits,
                               total.written_main_bits, 0, total.written_main_bits))
    for i, (layer, shape) in enumerate(zip(g.layers, g.shapes)):
        label = _label(i, layer)
        local = TrafficCounter()
        start = time.perf_counter()
        if layer.kind == "pool":
            local.read(_act_bits(act))
            act = _repack(pool(_decode(act), layer.pool_spec), act.bits)
            local.write(_act_bits(act), "packed", label)
            interlayer = _act_bits(act)
        elif fusion:
            act = _kernel(layer, shape, act, layer.epilogue, local, workers)
            interlayer = local.events[-1][2]
        else:
            y = _kernel(layer, shape, act, None, local, workers)
            act, fed = _unfused_epilogue(y, layer.epilogue, local, label)
            interlayer = fed if layer.epilogue.quant is not None else local.events[-1][2]
        seconds = time.perf_counter() - start
        reports.append(LayerReport(label, layer.kind, seconds, local.read_main_bits, local.written_main_bits,
                                   local.staged_bits, interlayer))
        total.merge(local)
    logits = to_int32(np.asarray(act))
    return ModelRun(logits, reports, total, fusion)


def run_model(g: ModelGraph, image, *, fusion: bool = True, traffic: TrafficCounter | None = None,
              workers: int = 1) -> np.ndarray:
    """int32 logits of ``g`` on an 8-bit ``image``."""
    run = run_model_detailed(g, image, fusion=fusion, workers=workers)
    if traffic is not None:
        traffic.merge(run.traffic)
    return run.logits


def interlayer_writes(traffic: TrafficCounter) -> list:
    """Main-memory writes that hold full-precision tensors."""
    return [e for e in traffic.events if e[0] != "packed"]


@dataclass
class FusionReport:
    """Traffic in bits; times are the median over interleaved repeats."""

    fused_traffic: int
    unfused_traffic: int
    fused_time: float
    unfused_time: float
    interlayer: list
    fused_best: float = 0.0
    unfused_best: float = 0.0

    @property
    def traffic_ratio(self) -> float:
        return self.unfused_traffic / self.fused_traffic


def measure_fusion(g: ModelGraph, image, repeats: int = 3) -> FusionReport:
    """Traffic and wall time of the whole model, fused vs unfused."""
    times = {True: [], False: []}
    runs = {}
    # alternate the two modes so clock drift and cache warmup hit both alike
    gc_was_on = gc.isenabled()
    gc.disable()
    try:
        for _ in range(max(1, repeats)):
            for fusion in (True, False):
                start = time.perf_counter()
                runs[fusion] = run_model_detailed(g, image, fusion=fusion)
                times[fusion].append(time.perf_counter() - start)
    finally:
        if gc_was_on:
            gc.enable()
    fused, unfused = runs[True], runs[False]
    if not np.array_equal(fused.logits, unfused.logits):
        raise AssertionError("fused and unfused logits differ")
    inter = [(a.name, a.interlayer_bits, b.interlayer_bits) for a, b in zip(fused.layers, unfused.layers)]
    return FusionReport(fused.traffic.main_bits, unfused.traffic.main_bits, float(np.median(times[True])),
                        float(np.median(times[False])), inter, min(times[True]), min(times[False]))


def plan_model_traffic(g: ModelGraph) -> list:
    """Shape-only estimate: (layer, staged bits + output bits) per layer."""
    rows = []
    for i, (layer, shape) in enumerate(zip(g.layers, g.shapes)):
        out_elems = int(np.prod(shape.out_shape))
        write = out_elems * (shape.out_bits or FULL_BITS)
        if layer.kind == "conv":
            c = shape.conv
            cfg = autotune(c.c_out, c.pixels, c.reduction, layer.weights.bits, shape.in_bits)
            staged = 8 * im_traffic(c, layer.weights.bits, shape.in_bits, cfg).total_bytes
        elif layer.kind == "pool":
            staged = int(np.prod(shape.in_shape)) * shape.in_bits
        else:
            n, f = shape.in_shape[0], int(np.prod(shape.in_shape[1:]))
            n_out = layer.weights.dims[0]
            cfg = autotune(n, n_out, f, shape.in_bits, layer.weights.bits)
            staged = 8 * plan_traffic(n, n_out, f, shape.in_bits, layer.weights.bits, cfg).total_bytes
        rows.append((_label(i, layer), staged + write))
    return rows


def reference_model(g: ModelGraph, image) -> np.ndarray:
    """Value-domain oracle: decoded weights, plain numpy, unfused."""
    x = np.asarray(image, dtype=np.int64)
    if g.input_quant is not None:
        q = g.input_quant
        x = reference.quantize(x, q.zero_point, q.scale, q.bits)
    for layer in g.layers:
        if layer.kind == "pool":
            x = reference.pool(x, layer.pool_spec.kind, layer.pool_spec.k)
            continue
        w = reconstruct(layer.weights).astype(np.int64)
        if layer.kind == "conv":
            y = reference.conv2d(x, np.transpose(w, (0, 3, 1, 2)), layer.stride, layer.pad)
        else:
            y = reference.gemm(x.reshape(x.shape[0], -1), w)
        x = reference.epilogue(y, layer.epilogue)
    return x


def random_graph(rng: np.random.Generator, index: int = 0, max_layers: int = 5) -> tuple:
    """A small random model and image; ``index`` cycles epilogue subsets.

    Returns ``(graph, image)``.
    """
    n = int(rng.integers(1, 3))
    spatial = bool(rng.integers(0, 2)) or index % 2 == 0
    depth = int(rng.integers(1, max_layers + 1))
    if spatial:
        shape = (n, int(rng.integers(4, 9)), int(rng.integers(4, 9)), int(rng.integers(1, 9)))
    else:
        shape = (n, int(rng.integers(4, 40)))
    image = rng.integers(0, 256, shape)
    in_bits = int(rng.integers(1, 9))
    input_quant = Quantize(0, 256 // (1 << in_bits), in_bits) if in_bits < 8 else None
    layers = []
    cur, bits = shape, in_bits
    for i in range(depth):
        last = i == depth - 1
        subset = (index + i) % 16  # bits: bn, relu, pool, (quant is forced for hidden layers)
        p = int(rng.integers(1, 9))
        pm1 = bool(rng.integers(0, 4) == 0)
        if pm1:
            p = 1
        enc = Encoding.PLUS_MINUS_ONE if pm1 else Encoding.ZERO_ONE

        def wvals(size):
            return rng.choice([-1, 1], size) if pm1 else rng.integers(0, 1 << p, size)

        use_conv = len(cur) == 4 and not last and cur[1] >= 2 and cur[2] >= 2 and rng.integers(0, 3) > 0
        if len(cur) == 4 and not last and not use_conv and cur[1] >= 4 and cur[2] >= 4 and rng.integers(0, 3) == 0:
            k = 2
            layers.append(LayerSpec.pooling("max" if rng.integers(0, 2) else "avg", k))
            cur = (cur[0], cur[1] // k, cur[2] // k, cur[3])
            continue
        if use_conv:
            c_out = int(rng.integers(2, 9))
            k = int(rng.choice([1, 3])) if min(cur[1], cur[2]) >= 3 else 1
            pad = int(rng.integers(0, 2)) if k == 3 else 0
            stride = int(rng.integers(1, 3))
            conv = ConvShape(cur[0], cur[3], cur[1], cur[2], c_out, k, stride, pad)
            out = (cur[0], conv.out_h, conv.out_w, c_out)
            reduce_len = k * k * cur[3]
        else:
            c_out = int(rng.integers(2, 9)) if not last else int(rng.integers(2, 11))
            out = (cur[0], c_out)
            reduce_len = int(np.prod(cur[1:]))
        span = reduce_len * max(1, (1 << p) - 1) * ((1 << bits) - 1)
        bn = relu = pool_spec = quant = None
        if subset & 1:
            bn = BatchNorm(gamma=rng.uniform(0.5, 2.0, c_out), beta=rng.uniform(-2, 2, c_out),
                           mean=rng.uniform(-span / 4, span / 2, c_out), var=rng.uniform(0.5, 4.0, c_out),
                           eps=1e-5)
        relu = bool(subset & 2)
        if subset & 4 and use_conv and out[1] >= 2 and out[2] >= 2:
            pool_spec = Pool("avg" if subset & 8 else "max", 2)
            out = (out[0], out[1] // 2, out[2] // 2, out[3])
        if not last:
            q_out = int(rng.integers(1, 5))
            if bn is None:
                scale = max(1, span // (2 << q_out))
            else:
                scale = max(span / float(np.sqrt(bn.var.mean())), 1.0) / (2 << q_out)
            zero = int(rng.integers(-2, 3)) if bn is None else float(rng.uniform(-1, 1))
            quant = Quantize(zero, scale, q_out)
        ep = Epilogue(bn=bn, relu=relu, pool=pool_spec, quant=quant)
        if use_conv:
            layers.append(LayerSpec.conv(wvals((c_out, cur[3], k, k)), p, enc, stride, pad, ep))
        elif last:
            layers.append(LayerSpec.output(wvals((c_out, reduce_len)), p, enc, ep))
        else:
            layers.append(LayerSpec.fc(wvals((c_out, reduce_len)), p, enc, ep))
        cur = out
        bits = quant.bits if quant is not None else bits
    return ModelGraph(shape, layers, input_quant), image
