"""Command line: ``apbit verify | bench | run | profile``.

Exit codes: 0 ok, 1 verification mismatch, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from apbit import backend, bptio, reference
from apbit.apconv import ConvShape, apconv, conv_weights, to_channel_major
from apbit.apmm import apmm, reference_gemm
from apbit.bitplane import Encoding, decompose, reconstruct
from apbit.bmma import Case, select_operator
from apbit.counters import TrafficCounter
from apbit.errors import ApbitError
from apbit.tuner import (DEFAULT_PROFILE, autotune, choose_path, default_profile_path, estimate, load_profile,
                         profile_switch)

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2

APMM_MN = (8, 64, 128)
APMM_K = (128, 512)
CONV_PQ = [(p, q) for p in range(1, 5) for q in range(1, 5)] + [(1, 8), (2, 8)]
CONV_GEOMETRY = [(k, s, pad) for k in (1, 3) for s in (1, 2) for pad in (0, 1)]


@dataclass
class Row:
    kernel: str
    shape: str
    p: int
    q: int
    case: str
    cfg: str
    checksum: int
    match: bool
    staged_bytes: float
    seconds: float


@dataclass
class Report:
    command: str
    seed: int
    backend: str
    rows: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(r.match for r in self.rows)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Report":
        d = json.loads(text)
        d["rows"] = [Row(**r) for r in d["rows"]]
        return cls(**d)

    def to_csv(self) -> str:
        buf = io.StringIO()
        names = [f.name for f in dataclasses.fields(Row)]
        writer = csv.DictWriter(buf, fieldnames=names)
        writer.writeheader()
        for r in self.rows:
            writer.writerow(dataclasses.asdict(r))
        return buf.getvalue()


def _checksum(y: np.ndarray) -> int:
    return zlib.crc32(np.ascontiguousarray(y, dtype=np.int32).tobytes())


def _parse_case(text: str) -> tuple[int, int]:
    t = text.lower()
    if not (t.startswith("w") and "a" in t):
        raise argparse.ArgumentTypeError(f"case must look like w1a2, got {text!r}")
    p, q = t[1:].split("a", 1)
    p, q = int(p), int(q)
    if not (1 <= p <= 8 and 1 <= q <= 8):
        raise argparse.ArgumentTypeError("p and q must be in [1, 8]")
    return p, q


def _parse_ints(count: int):
    def parse(text: str) -> tuple[int, ...]:
        try:
            vals = tuple(int(v) for v in text.split(","))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated integers") from None
        if len(vals) != count or any(v < 0 for v in vals):
            raise argparse.ArgumentTypeError(f"expected {count} comma-separated non-negative integers")
        return vals
    return parse


def _encoding_pairs(p: int, q: int, which: str | None):
    """Legal (w_enc, x_enc) pairs for a precision, filtered by --encoding."""
    z, pm = Encoding.ZERO_ONE, Encoding.PLUS_MINUS_ONE
    pairs = []
    if which in (None, "01"):
        pairs.append((z, z))
    if which in (None, "pm1") and p == 1 and q == 1:
        pairs.append((pm, pm))
    if which in (None, "mixed"):
        if p == 1:
            pairs.append((pm, z))
        if q == 1:
            pairs.append((z, pm))
    return pairs


def _case_name(w_enc, x_enc) -> str:
    case = select_operator(w_enc, x_enc)
    if case is Case.III and w_enc is Encoding.ZERO_ONE:
        return "III-swapped"
    return case.value


def _values(rng, shape, bits, enc):
    if enc is Encoding.PLUS_MINUS_ONE:
        return rng.choice(np.array([-1, 1]), shape)
    return rng.integers(0, 1 << bits, shape)


def _verify_apmm(rng, p, q, M, N, K, w_enc, x_enc, workers, corrupt) -> Row:
    w = _values(rng, (M, K), p, w_enc)
    x = _values(rng, (N, K), q, x_enc)
    W, X = decompose(w, p, w_enc), decompose(x, q, x_enc)
    cfg = autotune(M, N, K, p, q)
    traffic = TrafficCounter()
    start = time.perf_counter()
    y = apmm(W, X, cfg, traffic=traffic, workers=workers)
    seconds = time.perf_counter() - start
    if corrupt:
        y = y.copy()
        y.flat[0] ^= 1
    ok = np.array_equal(y, reference.gemm(w, x))
    return Row("apmm", f"{M},{N},{K}", p, q, _case_name(w_enc, x_enc), str(cfg), _checksum(y), bool(ok),
               traffic.bytes_staged, seconds)


def _verify_conv(rng, p, q, shape: ConvShape, w_enc, x_enc, workers, corrupt) -> Row:
    s = shape
    w = _values(rng, (s.c_out, s.c_in, s.k, s.k), p, w_enc)
    x = _values(rng, (s.bs, s.height, s.width, s.c_in), q, x_enc)
    W, X = conv_weights(w, p, w_enc), to_channel_major(x, q, x_enc)
    cfg = autotune(s.c_out, s.pixels, s.reduction, p, q)
    traffic = TrafficCounter()
    start = time.perf_counter()
    y = apconv(W, X, s, cfg, traffic=traffic, workers=workers)
    seconds = time.perf_counter() - start
    if corrupt:
        y = y.copy()
        y.flat[0] ^= 1
    ok = np.array_equal(y, reference.conv2d(x, w, s.stride, s.pad))
    desc = f"{s.bs},{s.c_in},{s.height},{s.width},{s.c_out},{s.k},{s.stride},{s.pad}"
    return Row("apconv", desc, p, q, _case_name(w_enc, x_enc), str(cfg), _checksum(y), bool(ok),
               traffic.bytes_staged, seconds)


def verify_cases(args, rng):
    """Yield zero-argument callables, one per verification case."""
    pqs = [args.case] if args.case else [(p, q) for p in range(1, 9) for q in range(1, 9)]
    run_mm = args.mnk is not None or args.conv is None
    run_conv = args.conv is not None or args.mnk is None
    if run_mm:
        shapes = [args.mnk] if args.mnk else [(m, n, k) for m in APMM_MN for n in APMM_MN for k in APMM_K]
        for p, q in pqs:
            for w_enc, x_enc in _encoding_pairs(p, q, args.encoding):
                for M, N, K in shapes:
                    yield lambda p=p, q=q, M=M, N=N, K=K, w_enc=w_enc, x_enc=x_enc, c=False: _verify_apmm(
                        rng, p, q, M, N, K, w_enc, x_enc, args.threads, c)
    if run_conv:
        conv_pqs = [args.case] if args.case else CONV_PQ
        for p, q in conv_pqs:
            for w_enc, x_enc in _encoding_pairs(p, q, args.encoding):
                if (w_enc, x_enc) == (Encoding.ZERO_ONE, Encoding.PLUS_MINUS_ONE):
                    continue  # no padding rule for this pair
                if args.conv:
                    bs, c_in, h, w, c_out, k, st, pad = args.conv
                    geoms = [ConvShape(bs, c_in, h, w, c_out, k, st, pad)]
                else:
                    geoms = []
                    for k, st, pad in CONV_GEOMETRY:
                        hw = int(rng.choice([4, 8, 16]))
                        geoms.append(ConvShape(1, int(rng.choice([128, 256])), hw, int(rng.choice([4, 8, 16])),
                                               int(rng.choice([4, 8])), k, st, pad))
                for shape in geoms:
                    yield lambda p=p, q=q, shape=shape, w_enc=w_enc, x_enc=x_enc, c=False: _verify_conv(
                        rng, p, q, shape, w_enc, x_enc, args.threads, c)


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    report = Report("verify", args.seed, backend.kernels.NAME)
    first_bad = None
    for i, case in enumerate(verify_cases(args, rng)):
        row = case(c=args.corrupt_bit and i == 0)
        report.rows.append(row)
        if not row.match and first_bad is None:
            first_bad = row
    _emit(report, args)
    if first_bad is not None:
        print(f"MISMATCH {first_bad.kernel} w{first_bad.p}a{first_bad.q} case {first_bad.case} "
              f"shape {first_bad.shape} cfg {first_bad.cfg}", file=sys.stderr)
        return EXIT_MISMATCH
    if not args.json:
        print(f"verify: {len(report.rows)} cases, all bit-exact ({report.backend} backend)")
    return EXIT_OK


def _time(fn, runs: int, warmup: int) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(np.mean(samples)), float(np.std(samples))


def _profile(args):
    path = args.profile or os.environ.get("APBIT_PROFILE")
    if path is None:
        return DEFAULT_PROFILE
    return load_profile(path)


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    p, q = args.case or (1, 1)
    M, N, K = args.mnk or (1024, 1024, 1024)
    profile = _profile(args)
    w = rng.integers(0, 1 << p, (M, K))
    x = rng.integers(0, 1 << q, (N, K))
    W, X = decompose(w, p), decompose(x, q)
    cfg = autotune(M, N, K, p, q, profile)
    path = choose_path(p, q, estimate(M, N, K, p, q, cfg).tlp, profile)
    report = Report("bench", args.seed, backend.kernels.NAME)
    y = apmm(W, X, cfg, workers=args.threads)
    ok = bool(np.array_equal(y, reference_gemm(w, x)))
    emu_mean, emu_std = _time(lambda: apmm(W, X, cfg, workers=args.threads), args.runs, args.warmup)
    traffic = TrafficCounter()
    apmm(W, X, cfg, traffic=traffic)
    report.rows.append(Row("apmm", f"{M},{N},{K}", p, q, "I", str(cfg), _checksum(y), ok,
                           traffic.bytes_staged, emu_mean))
    ref_mean, ref_std = _time(lambda: reference_gemm(w, x), args.runs, args.warmup)
    report.rows.append(Row("int_gemm", f"{M},{N},{K}", p, q, "-", "-", _checksum(y), ok, 0.0, ref_mean))
    extra = {"runs": args.runs, "warmup": args.warmup, "apmm_mean": emu_mean, "apmm_std": emu_std,
             "int_gemm_mean": ref_mean, "int_gemm_std": ref_std, "switch": path.value,
             "profile": dataclasses.asdict(profile)}
    if args.naive_runs > 0:
        w32, x32 = w.astype(np.int32), x.astype(np.int32)
        naive_mean, naive_std = _time(lambda: backend.kernels.naive_gemm(w32, x32), args.naive_runs, 0)
        report.rows.append(Row("naive_loop", f"{M},{N},{K}", p, q, "-", "-", _checksum(y), ok, 0.0, naive_mean))
        extra.update(naive_mean=naive_mean, naive_std=naive_std, speedup_vs_naive=naive_mean / emu_mean)
    if args.model:
        from apbit.apnn import measure_fusion
        from apbit.modelcfg import load
        graph = load(args.model)
        image = reconstruct(bptio.load(args.image)[0]) if args.image else rng.integers(0, 256, graph.input_shape)
        fusion = measure_fusion(graph, image, repeats=args.model_runs)
        extra.update(model_fused_time=fusion.fused_time, model_unfused_time=fusion.unfused_time,
                     model_fused_bits=fusion.fused_traffic, model_unfused_bits=fusion.unfused_traffic)
    report.extra = extra
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    if args.json:
        print(report.to_json())
    else:
        print(f"w{p}a{q} {M}x{N}x{K} cfg {cfg} ({args.runs} runs, {args.warmup} warmup, backend {report.backend})")
        print(f"  apmm      {emu_mean * 1e3:10.3f} ms  +- {emu_std * 1e3:.3f}")
        print(f"  int gemm  {ref_mean * 1e3:10.3f} ms  +- {ref_std * 1e3:.3f}")
        if "naive_mean" in extra:
            print(f"  naive     {extra['naive_mean'] * 1e3:10.3f} ms  ({extra['speedup_vs_naive']:.1f}x slower than apmm)")
        print(f"  switch decision: {path.value}")
        if args.model:
            print(f"  model fused {extra['model_fused_time'] * 1e3:.3f} ms / {extra['model_fused_bits']} bits, "
                  f"unfused {extra['model_unfused_time'] * 1e3:.3f} ms / {extra['model_unfused_bits']} bits")
    if args.out:
        Path(args.out).write_text(report.to_json())
    return EXIT_OK if ok else EXIT_MISMATCH


def cmd_run(args) -> int:
    from apbit.apnn import run_model_detailed
    from apbit.modelcfg import load
    graph = load(args.model)
    image_path = Path(args.image)
    if not image_path.exists():
        raise FileNotFoundError(f"image file not found: {image_path}")
    image = reconstruct(bptio.load(image_path)[0])
    run = run_model_detailed(graph, image, fusion=not args.no_fusion, workers=args.threads)
    total_time = sum(r.seconds for r in run.layers) or 1.0
    total_bits = run.traffic.main_bits or 1
    if args.json:
        print(json.dumps({"logits": run.logits.tolist(), "fusion": run.fusion,
                          "traffic_bits": run.traffic.main_bits,
                          "layers": [dataclasses.asdict(r) for r in run.layers]}, indent=1))
        return EXIT_OK
    print("logits:", " ".join(str(v) for v in run.logits.ravel()) if run.logits.shape[0] == 1
          else "\n  " + "\n  ".join(" ".join(str(v) for v in row) for row in run.logits))
    print(f"fusion: {'on' if run.fusion else 'off'}")
    print(f"{'layer':<12}{'kind':<8}{'time ms':>10}{'time %':>8}{'traffic bits':>14}{'traffic %':>10}")
    for r in run.layers:
        print(f"{r.name:<12}{r.kind:<8}{r.seconds * 1e3:>10.3f}{100 * r.seconds / total_time:>8.1f}"
              f"{r.main_bits:>14}{100 * r.main_bits / total_bits:>10.1f}")
    print(f"total traffic: {run.traffic.main_bits} bits")
    return EXIT_OK


def cmd_profile(args) -> int:
    path = args.profile or default_profile_path()
    prof = profile_switch(tuple(args.sizes), path=path, runs=args.runs)
    print(prof.dumps().strip())
    print(f"saved to {path}")
    return EXIT_OK


def _emit(report: Report, args) -> None:
    if args.json:
        print(report.to_json())
    if getattr(args, "out", None):
        Path(args.out).write_text(report.to_json())
    if getattr(args, "csv", None):
        Path(args.csv).write_text(report.to_csv())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apbit", description="Arbitrary-precision GEMM/conv on 1-bit planes")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--json", action="store_true", help="print a JSON report")
    common.add_argument("--profile", help="switch profile file (default $APBIT_PROFILE or ~/.cache/apbit)")
    sub = parser.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", parents=[common], help="check kernels against integer oracles")
    v.add_argument("--case", type=_parse_case, help="restrict to one precision, e.g. w1a2")
    v.add_argument("--mnk", type=_parse_ints(3), help="one GEMM shape M,N,K")
    v.add_argument("--conv", type=_parse_ints(8), help="one conv shape BS,Cin,H,W,Cout,K,stride,pad")
    v.add_argument("--encoding", choices=["01", "pm1", "mixed"])
    v.add_argument("--out", help="write the JSON report here")
    v.add_argument("--csv", help="write a CSV report here")
    v.add_argument("--corrupt-bit", action="store_true", help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", parents=[common], help="time emulated GEMM against integer references")
    b.add_argument("--case", type=_parse_case)
    b.add_argument("--mnk", type=_parse_ints(3))
    b.add_argument("--runs", type=int, default=200)
    b.add_argument("--warmup", type=int, default=10)
    b.add_argument("--naive-runs", type=int, default=1, help="runs of the scalar triple loop (0 to skip)")
    b.add_argument("--model", help="also time a model config fused vs unfused")
    b.add_argument("--image", help="image .bpt for --model (random if omitted)")
    b.add_argument("--model-runs", type=int, default=5)
    b.add_argument("--out", help="write the JSON report here")
    b.add_argument("--csv", help="write a CSV report here")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("run", parents=[common], help="run a model config on an image")
    r.add_argument("model")
    r.add_argument("image")
    r.add_argument("--no-fusion", action="store_true")
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("profile", parents=[common], help="measure the precision-switch ratios")
    pr.add_argument("--sizes", type=int, nargs="+", default=[256])
    pr.add_argument("--runs", type=int, default=5)
    pr.set_defaults(func=cmd_profile)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"apbit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ApbitError, ValueError, KeyError) as exc:
        print(f"apbit: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
