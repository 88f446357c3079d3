"""Compiled extension vs numpy fallback on the same apmm/apconv calls.

    python3 benchmarks/bench_backends.py [--runs 5] [--size 256]

Prints best-of-runs milliseconds per backend and the ratio.  Both backends
are checked for identical output before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from apbit import backend
from apbit.apconv import ConvShape, apconv, conv_weights, to_channel_major
from apbit.apmm import apmm
from apbit.bitplane import decompose
from apbit.tuner import autotune


def best(fn, runs: int) -> float:
    times = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases(size: int, rng):
    for p, q in [(1, 1), (1, 2), (2, 2)]:
        W = decompose(rng.integers(0, 1 << p, (size, size)), p)
        X = decompose(rng.integers(0, 1 << q, (size, size)), q)
        cfg = autotune(size, size, size, p, q)
        yield f"apmm w{p}a{q} {size}^3", lambda k, W=W, X=X, cfg=cfg: apmm(W, X, cfg, kernels=k)
    s = ConvShape(1, 128, 16, 16, 64, 3, 1, 1)
    W = conv_weights(rng.integers(0, 2, (64, 128, 3, 3)), 1)
    X = to_channel_major(rng.integers(0, 4, (1, 16, 16, 128)), 2)
    yield "apconv w1a2 16x16x128->64 k3", lambda k: apconv(W, X, s, kernels=k)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=5)
    ap.add_argument("--size", type=int, default=256)
    args = ap.parse_args(argv)
    names = backend.available()
    if "compiled" not in names:
        print("compiled extension not built; only the python fallback is available")
    kernels = {n: backend.get(n) for n in names}
    rng = np.random.default_rng(0)
    print(f"{'case':<32}" + "".join(f"{n + ' ms':>14}" for n in names) + ("   ratio" if len(names) > 1 else ""))
    for label, fn in cases(args.size, rng):
        outs = [fn(k) for k in kernels.values()]
        assert all(np.array_equal(outs[0], o) for o in outs[1:]), label
        ms = [best(lambda k=k: fn(k), args.runs) * 1e3 for k in kernels.values()]
        ratio = f"{ms[-1] / ms[0]:8.1f}x" if len(ms) > 1 else ""
        print(f"{label:<32}" + "".join(f"{m:14.2f}" for m in ms) + ratio)


if __name__ == "__main__":
    main()
