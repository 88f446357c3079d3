"""Regenerate the shipped example models under models/.

Each model directory gets model.toml, weight .bpt files, image.bpt and
golden.json (logits from the value-domain oracle).  Deterministic per seed.

    python3 tools/make_examples.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from apbit import bptio
from apbit.apconv import conv_weights
from apbit.apnn import reference_model
from apbit.bitplane import Encoding, decompose
from apbit.modelcfg import load

ROOT = Path(__file__).resolve().parent.parent / "models"


def _floats(values) -> str:
    return "[" + ", ".join(f"{float(v):.6g}" for v in values) + "]"


def _bn(rng, n, center, spread) -> str:
    return ("bn = { gamma = %s, beta = %s, mean = %s, var = %s, eps = 1e-5 }" % (
        _floats(rng.uniform(0.8, 1.2, n)), _floats(rng.uniform(-1, 1, n)),
        _floats(rng.uniform(center - spread, center + spread, n)), _floats(rng.uniform(0.5 * spread**2, spread**2, n))))


def _write(directory: Path, toml: str, weights: dict, image) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "model.toml").write_text(toml)
    for name, t in weights.items():
        bptio.save(directory / name, t)
    bptio.save(directory / "image.bpt", decompose(image, 8), layout="NHWC" if image.ndim == 4 else None)
    graph = load(directory / "model.toml")
    logits = reference_model(graph, image)
    (directory / "golden.json").write_text(json.dumps({"logits": logits.tolist()}, indent=1) + "\n")


def toy_cnn(seed: int = 7) -> None:
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, (1, 8, 8, 3))
    w1 = rng.choice([-1, 1], (8, 3, 3, 3))
    w2 = rng.integers(0, 4, (16, 4 * 4 * 8))
    w3 = rng.choice([-1, 1], (10, 16))
    toml = f"""# conv 3x3 w1a2 -> fc w2a2 -> output w1a2
[model]
name = "toy_cnn"
input_shape = [1, 8, 8, 3]
input_quant = {{ zero_point = 0, scale = 64, bits = 2 }}

[[layer]]
kind = "conv"
name = "conv1"
weights = "conv1.bpt"
stride = 1
pad = 1
{_bn(rng, 8, 0.0, 6.0)}
relu = true
pool = {{ kind = "max", k = 2 }}
quant = {{ zero_point = 0, scale = 0.5, bits = 2 }}

[[layer]]
kind = "fc"
name = "fc1"
weights = "fc1.bpt"
quant = {{ zero_point = 200, scale = 40, bits = 2 }}

[[layer]]
kind = "output"
name = "logits"
weights = "out.bpt"
"""
    weights = {"conv1.bpt": conv_weights(w1, 1, Encoding.PLUS_MINUS_ONE), "fc1.bpt": decompose(w2, 2),
               "out.bpt": decompose(w3, 1, Encoding.PLUS_MINUS_ONE)}
    _write(ROOT / "toy_cnn", toml, weights, image)


def toy_mlp(seed: int = 11) -> None:
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, (2, 64))
    w1 = rng.choice([-1, 1], (32, 64))
    w2 = rng.integers(0, 4, (16, 32))
    w3 = rng.integers(0, 2, (10, 16))
    toml = f"""# fc w1a2 -> fc w2a2 -> output w1a2
[model]
name = "toy_mlp"
input_shape = [2, 64]
input_quant = {{ zero_point = 0, scale = 64, bits = 2 }}

[[layer]]
kind = "fc"
name = "fc1"
weights = "fc1.bpt"
{_bn(rng, 32, 0.0, 10.0)}
relu = true
quant = {{ zero_point = 0, scale = 0.4, bits = 2 }}

[[layer]]
kind = "fc"
name = "fc2"
weights = "fc2.bpt"
relu = true
quant = {{ zero_point = 20, scale = 10, bits = 2 }}

[[layer]]
kind = "output"
name = "logits"
weights = "out.bpt"
"""
    weights = {"fc1.bpt": decompose(w1, 1, Encoding.PLUS_MINUS_ONE), "fc2.bpt": decompose(w2, 2),
               "out.bpt": decompose(w3, 1)}
    _write(ROOT / "toy_mlp", toml, weights, image)


if __name__ == "__main__":
    toy_cnn()
    toy_mlp()
    print(f"wrote examples under {ROOT}")
