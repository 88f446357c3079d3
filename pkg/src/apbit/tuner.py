"""Analytic tile-size tuning and the emulate-vs-native precision switch.

TLP = (p M * q N) / (b_m b_n) counts output blocks of the virtually batched
product; CI = 2 b_m b_n / (b_m + b_n) is the block's compute per staged
element and does not depend on b_k.
"""

from __future__ import annotations

import enum
import heapq
import os
import platform
import time
import warnings
from dataclasses import dataclass
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path

import numpy as np
from filelock import FileLock

from apbit.apmm import BLOCK_SIZES, TileConfig, apmm, reference_gemm
from apbit.bitplane import Encoding, decompose

DEFAULT_T = 64
DEFAULT_R4 = 2.5
DEFAULT_R8 = 6.0


@dataclass(frozen=True)
class PerfEstimate:
    tlp: Fraction
    ci: Fraction
    cfg: TileConfig


def estimate(M: int, N: int, K: int, p: int, q: int, cfg: TileConfig) -> PerfEstimate:
    tlp = Fraction(p * M * q * N, cfg.b_m * cfg.b_n)
    ci = Fraction(2 * cfg.b_m * cfg.b_n, cfg.b_m + cfg.b_n)
    return PerfEstimate(tlp, ci, cfg)


@dataclass(frozen=True)
class SwitchProfile:
    r4: float = DEFAULT_R4
    r8: float = DEFAULT_R8
    t: float = DEFAULT_T
    host: str = ""
    timestamp: str = ""

    def __post_init__(self):
        if not (self.r4 > 0 and self.r8 > 0 and self.t > 0):
            raise ValueError("r4, r8 and t must be positive")

    def dumps(self) -> str:
        return (f"r4={self.r4!r}\nr8={self.r8!r}\nt={self.t!r}\n"
                f"host={self.host}\ntimestamp={self.timestamp}\n")

    @classmethod
    def loads(cls, text: str) -> "SwitchProfile":
        fields = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"profile line {lineno}: expected key=value")
            fields[key.strip()] = value.strip()
        return cls(r4=float(fields["r4"]), r8=float(fields["r8"]), t=float(fields.get("t", DEFAULT_T)),
                   host=fields.get("host", ""), timestamp=fields.get("timestamp", ""))


DEFAULT_PROFILE = SwitchProfile()


def default_profile_path() -> Path:
    env = os.environ.get("APBIT_PROFILE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "apbit" / "profile.txt"


def save_profile(profile: SwitchProfile, path=None) -> Path:
    path = Path(path) if path is not None else default_profile_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + ".lock"):
        path.write_text(profile.dumps())
    return path


def load_profile(path=None) -> SwitchProfile:
    path = Path(path) if path is not None else default_profile_path()
    with FileLock(str(path) + ".lock"):
        return SwitchProfile.loads(path.read_text())


def _priority(est: PerfEstimate):
    # heapq is a min-heap: higher TLP first, then CI, b_m, b_n
    return (-est.tlp, -est.ci, -est.cfg.b_m, -est.cfg.b_n)


def autotune(M: int, N: int, K: int, p: int, q: int, profile: SwitchProfile | None = None,
             b_k: int = 128) -> TileConfig:
    """Pick (b_m, b_n): max CI among configs whose TLP reaches the threshold.

    If even the highest-TLP config is below the threshold it is returned.
    """
    threshold = (profile or DEFAULT_PROFILE).t
    heap = []
    for b_m in BLOCK_SIZES:
        for b_n in BLOCK_SIZES:
            est = estimate(M, N, K, p, q, TileConfig(b_m, b_n, b_k))
            heapq.heappush(heap, (_priority(est), est))
    _, best = heapq.heappop(heap)
    if best.tlp < threshold:
        return best.cfg
    while heap:
        _, est = heapq.heappop(heap)
        if est.tlp < threshold:
            break
        if est.ci > best.ci:
            best = est
    return best.cfg


class ExecPath(enum.Enum):
    EMULATE = "emulate"
    NATIVE_INT4 = "native_int4"
    NATIVE_INT8 = "native_int8"


def relative_peak(p: int, q: int, profile: SwitchProfile) -> tuple[float, ExecPath]:
    if p <= 4 and q <= 4:
        return profile.r4, ExecPath.NATIVE_INT4
    return profile.r8, ExecPath.NATIVE_INT8


def choose_path(p: int, q: int, tlp, profile: SwitchProfile = DEFAULT_PROFILE) -> ExecPath:
    """Emulate when p*q < R(p, q) or the grid is too small to fill the machine."""
    if not (1 <= p <= 8 and 1 <= q <= 8):
        raise ValueError("p and q must be in [1, 8]")
    ratio, native = relative_peak(p, q, profile)
    if p * q < ratio or tlp < profile.t:
        return ExecPath.EMULATE
    return native


def _clamp_native(values: np.ndarray, bits: int) -> np.ndarray:
    return np.clip(values, -(1 << (bits - 1)), (1 << bits) - 1)


def matmul(w_int, x_int, p: int, q: int, w_enc=Encoding.ZERO_ONE, x_enc=Encoding.ZERO_ONE,
           profile: SwitchProfile = DEFAULT_PROFILE, cfg: TileConfig | None = None):
    """Integer Y = W X^T routed by the tuner; returns (Y, cfg, path)."""
    w_int, x_int = np.asarray(w_int), np.asarray(x_int)
    M, K = w_int.shape
    N = x_int.shape[0]
    cfg = cfg or autotune(M, N, K, p, q, profile)
    path = choose_path(p, q, estimate(M, N, K, p, q, cfg).tlp, profile)
    if path is ExecPath.EMULATE:
        y = apmm(decompose(w_int, p, w_enc), decompose(x_int, q, x_enc), cfg)
    else:
        bits = 4 if path is ExecPath.NATIVE_INT4 else 8
        y = reference_gemm(_clamp_native(w_int, bits), _clamp_native(x_int, bits))
    return y, cfg, path


def _best_time(fn, runs: int) -> float:
    best = float("inf")
    for _ in range(runs):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def profile_switch(bench_sizes=(256,), path=None, runs: int = 5, t: float = DEFAULT_T,
                   seed: int = 0) -> SwitchProfile:
    """Measure R4/R8 on this machine and persist them.

    R_b is the throughput of the w1a1 emulated path over the integer
    reference GEMM fed b-bit inputs (the native stand-in).  A prior profile
    at ``path`` is compared and a warning issued when a ratio moved > 25%.
    """
    rng = np.random.default_rng(seed)
    ratios = {4: [], 8: []}
    for n in bench_sizes:
        w1 = decompose(rng.integers(0, 2, (n, n)), 1)
        x1 = decompose(rng.integers(0, 2, (n, n)), 1)
        cfg = autotune(n, n, n, 1, 1)
        t_emul = _best_time(lambda: apmm(w1, x1, cfg), runs)
        for bits in (4, 8):
            w = rng.integers(0, 1 << bits, (n, n))
            x = rng.integers(0, 1 << bits, (n, n))
            t_native = _best_time(lambda: reference_gemm(w, x), runs)
            ratios[bits].append(t_native / t_emul)
    stamp = datetime.now(timezone.utc).isoformat(timespec="seconds")
    profile = SwitchProfile(r4=float(np.mean(ratios[4])), r8=float(np.mean(ratios[8])), t=t,
                            host=platform.node(), timestamp=stamp)
    target = Path(path) if path is not None else default_profile_path()
    if target.exists():
        try:
            prior = load_profile(target)
        except (ValueError, KeyError):
            prior = None
        if prior is not None:
            for name in ("r4", "r8"):
                old, new = getattr(prior, name), getattr(profile, name)
                if abs(new - old) > 0.25 * old:
                    warnings.warn(f"{name} moved from {old:.3g} to {new:.3g} (>25%); machine may be noisy",
                                  stacklevel=2)
    save_profile(profile, target)
    return profile
