"""Plain integer oracles, written without any bit-level machinery.

Everything here works on decoded values in int64 / float64 so that the
packed kernels can be checked against something that shares no code path
with them.
"""

from __future__ import annotations

import numpy as np


def gemm(w, x) -> np.ndarray:
    """Y[i, j] = sum_k w[i, k] * x[j, k]."""
    return np.asarray(w, dtype=np.int64) @ np.asarray(x, dtype=np.int64).T


def conv2d(x, w, stride: int = 1, pad: int = 0) -> np.ndarray:
    """NHWC features, OIHW weights, zero border in the value domain."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    n, h, wd, c = x.shape
    c_out, c_in, k, _ = w.shape
    if c_in != c:
        raise ValueError(f"channel mismatch: {c} vs {c_in}")
    xp = np.zeros((n, h + 2 * pad, wd + 2 * pad, c), dtype=np.int64)
    xp[:, pad: pad + h, pad: pad + wd] = x
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, oh, ow, c_out), dtype=np.int64)
    for kh in range(k):
        for kw in range(k):
            patch = xp[:, kh: kh + stride * oh: stride, kw: kw + stride * ow: stride]
            out += np.einsum("nhwc,oc->nhwo", patch, w[:, :, kh, kw])
    return out


def conv2d_scalar(x, w, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Seven-loop version of :func:`conv2d`; slow, for tiny cases."""
    x = np.asarray(x, dtype=np.int64)
    w = np.asarray(w, dtype=np.int64)
    n, h, wd, c = x.shape
    c_out, _, k, _ = w.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, oh, ow, c_out), dtype=np.int64)
    for b in range(n):
        for i in range(oh):
            for j in range(ow):
                for o in range(c_out):
                    s = 0
                    for kh in range(k):
                        for kw in range(k):
                            ih, iw = i * stride + kh - pad, j * stride + kw - pad
                            if 0 <= ih < h and 0 <= iw < wd:
                                for ch in range(c):
                                    s += int(x[b, ih, iw, ch]) * int(w[o, ch, kh, kw])
                    out[b, i, j, o] = s
    return out


def bn(x, gamma, beta, mean, var, eps):
    return (np.asarray(x, dtype=np.float64) - mean) / np.sqrt(np.asarray(var, dtype=np.float64) + eps) * gamma + beta


def pool(x, kind: str, k: int):
    x = np.asarray(x)
    n, h, w, c = x.shape
    oh, ow = h // k, w // k
    out = np.zeros((n, oh, ow, c), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            win = x[:, i * k: (i + 1) * k, j * k: (j + 1) * k, :]
            if kind == "max":
                out[:, i, j] = win.max(axis=(1, 2))
            elif np.issubdtype(x.dtype, np.integer):
                out[:, i, j] = win.sum(axis=(1, 2)) // (k * k)
            else:
                out[:, i, j] = win.sum(axis=(1, 2)) / (k * k)
    return out


def quantize(x, zero_point, scale, bits: int):
    x = np.asarray(x)
    if np.issubdtype(x.dtype, np.integer) and float(zero_point).is_integer() and float(scale).is_integer():
        q = (x.astype(np.int64) - int(zero_point)) // int(scale)
    else:
        q = np.floor((x.astype(np.float64) - zero_point) / scale).astype(np.int64)
    return np.clip(q, 0, (1 << bits) - 1)


def epilogue(x, ep):
    """Sequential BN -> ReLU -> Pool -> Quantize (or final floor)."""
    v = np.asarray(x, dtype=np.int64)
    if ep is None:
        return v
    if ep.bn is not None:
        b = ep.bn
        v = bn(v, b.gamma, b.beta, b.mean, b.var, b.eps)
    if ep.relu:
        v = np.where(v > 0, v, 0).astype(v.dtype)
    if ep.pool is not None:
        v = pool(v, ep.pool.kind, ep.pool.k)
    if ep.quant is not None:
        q = ep.quant
        return quantize(v, q.zero_point, q.scale, q.bits)
    if np.issubdtype(v.dtype, np.floating):
        v = np.floor(v).astype(np.int64)
    return v
