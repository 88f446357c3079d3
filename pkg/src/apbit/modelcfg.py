"""TOML model configs.

Grammar (paths are relative to the config file)::

    [model]
    name = "toy_cnn"
    input_shape = [1, 8, 8, 3]        # (N, H, W, C) or (N, F)
    input_quant = { zero_point = 0, scale = 64, bits = 2 }   # optional

    [[layer]]
    kind = "conv"                     # conv | fc | pool | output
    name = "conv1"                    # optional
    weights = "conv1.bpt"             # conv: (C_out, K, K, C_in); fc/output: (out, in)
    stride = 1                        # conv only, default 1
    pad = 1                           # conv only, default 0
    relu = true                       # optional
    bn = { gamma = [...], beta = [...], mean = [...], var = [...], eps = 1e-5 }
    pool = { kind = "max", k = 2 }    # conv epilogue, or the body of a pool layer
    quant = { zero_point = 0, scale = 4, bits = 2 }   # required on hidden layers

Weights hold their own bit width and encoding.  Errors carry the line of
the offending ``[[layer]]`` table.
"""

from __future__ import annotations

import re
import sys
from pathlib import Path

from apbit import bptio
from apbit.apnn import LayerSpec, ModelGraph
from apbit.epilogue import BatchNorm, Epilogue, Pool, Quantize
from apbit.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

_LAYER_KEYS = {"kind", "name", "weights", "stride", "pad", "relu", "bn", "pool", "quant"}


def _layer_lines(text: str) -> list[int]:
    return [i + 1 for i, line in enumerate(text.splitlines()) if re.match(r"\s*\[\[\s*layer\s*\]\]", line)]


def _line_of(text: str, pattern: str) -> int | None:
    for i, line in enumerate(text.splitlines()):
        if re.match(pattern, line):
            return i + 1
    return None


def _quant(d, where) -> Quantize:
    try:
        return Quantize(zero_point=d.get("zero_point", 0), scale=d.get("scale", 1.0), bits=int(d["bits"]),
                        clamp=bool(d.get("clamp", True)))
    except KeyError as exc:
        raise ConfigError(f"{where}: quant needs {exc.args[0]!r}") from None


def _epilogue(d, where, is_pool_layer: bool) -> Epilogue:
    bn = None
    if "bn" in d:
        b = d["bn"]
        try:
            bn = BatchNorm(b["gamma"], b["beta"], b["mean"], b["var"], b.get("eps", 1e-5))
        except KeyError as exc:
            raise ConfigError(f"{where}: bn needs {exc.args[0]!r}") from None
    pool = None
    if "pool" in d and not is_pool_layer:
        pool = Pool(d["pool"].get("kind", "max"), int(d["pool"].get("k", 2)))
    quant = _quant(d["quant"], where) if "quant" in d else None
    return Epilogue(bn=bn, relu=bool(d.get("relu", False)), pool=pool, quant=quant)


def parse(text: str, base: Path = Path(".")) -> ModelGraph:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from None
    model = doc.get("model")
    if not isinstance(model, dict) or "input_shape" not in model:
        line = _line_of(text, r"\s*\[\s*model\s*\]")
        raise ConfigError(f"line {line or 1}: [model] table with input_shape is required")
    lines = _layer_lines(text)
    layers = []
    for i, d in enumerate(doc.get("layer", [])):
        where = f"line {lines[i] if i < len(lines) else '?'} (layer {i})"
        unknown = set(d) - _LAYER_KEYS
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        kind = d.get("kind")
        if kind is None:
            raise ConfigError(f"{where}: missing 'kind'")
        try:
            if kind == "pool":
                if "pool" not in d:
                    raise ConfigError(f"{where}: pool layer needs a pool table")
                layers.append(LayerSpec.pooling(d["pool"].get("kind", "max"), int(d["pool"].get("k", 2)),
                                                name=d.get("name", "")))
                continue
            if "weights" not in d:
                raise ConfigError(f"{where}: missing 'weights'")
            path = base / d["weights"]
            if not path.exists():
                raise FileNotFoundError(f"{where}: weight file not found: {path}")
            weights, _ = bptio.load(path)
            layers.append(LayerSpec(kind, weights, int(d.get("stride", 1)), int(d.get("pad", 0)),
                                    _epilogue(d, where, False), name=d.get("name", "")))
        except (ConfigError, FileNotFoundError):
            raise
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
    iq = model.get("input_quant")
    try:
        return ModelGraph(tuple(model["input_shape"]), layers,
                          _quant(iq, "[model] input_quant") if iq is not None else None,
                          name=model.get("name", "model"))
    except ValueError as exc:
        msg = str(exc)
        m = re.match(r"layer (\d+)", msg)
        if m and int(m.group(1)) < len(lines):
            msg = f"line {lines[int(m.group(1))]}: {msg}"
        raise ConfigError(msg) from None


def load(path) -> ModelGraph:
    path = Path(path)
    return parse(path.read_text(), path.parent)
