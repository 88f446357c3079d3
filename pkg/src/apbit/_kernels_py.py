"""Pure numpy fallback for the compiled kernels in ``_kernels.pyx``.

Same signatures, same results, same quanta counts; used when the extension
is not built or when ``APBIT_BACKEND=python``.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

MODE_AND = 0
MODE_XOR = 1
MODE_CASE3 = 2
MODE_CASE3_SWAPPED = 3


def _quanta(rows: int, cols: int, words: int) -> int:
    return -(-rows // 8) * -(-cols // 8) * -(-words // 2)


def _popc(x: np.ndarray) -> np.ndarray:
    return np.bitwise_count(x).astype(np.int32)


def _reduce(a: np.ndarray, b: np.ndarray, mode: int) -> np.ndarray:
    # a: (R, W), b: (C, W) -> (R, C)
    if mode == MODE_AND:
        return _popc(a[:, None, :] & b[None, :, :]).sum(axis=-1)
    if mode == MODE_XOR:
        nbits = 64 * a.shape[1]
        return nbits - 2 * _popc(a[:, None, :] ^ b[None, :, :]).sum(axis=-1)
    both = 2 * _popc(a[:, None, :] & b[None, :, :]).sum(axis=-1)
    if mode == MODE_CASE3:
        return both - _popc(b).sum(axis=-1)[None, :]
    return both - _popc(a).sum(axis=-1)[:, None]


def _gather(planes: np.ndarray, lo: int, hi: int, stride8: int, w0: int, w1: int):
    v = np.arange(lo, hi)
    plane, row = np.divmod(v, stride8)
    valid = row < planes.shape[1]
    out = np.zeros((hi - lo, w1 - w0), dtype=np.uint64)
    out[valid] = planes[plane[valid], row[valid], w0:w1]
    return out, valid


def gemm_block(a, b, acc, r0, r1, c0, c1, w0, w1, m8, n8, mode):
    ab, va = _gather(a, r0, r1, m8, w0, w1)
    bb, vb = _gather(b, c0, c1, n8, w0, w1)
    part = _reduce(ab, bb, mode)
    part[~va, :] = 0
    part[:, ~vb] = 0
    acc += part.astype(np.int32)
    return _quanta(r1 - r0, c1 - c0, w1 - w0)


def conv_block(wt, x, pad_run, acc, r0, r1, c0, c1, k0, k1,
               co8, pix8, out_h, out_w, stride, pad, mode):
    _, c_out, ksz, _, cw = wt.shape
    batch, _, height, width, _ = x.shape
    npix = batch * out_h * out_w

    v = np.arange(r0, r1)
    s_pl, o = np.divmod(v, co8)
    vrow = o < c_out
    u = np.arange(c0, c1)
    t_pl, pix = np.divmod(u, pix8)
    vcol = pix < npix
    pix = np.where(vcol, pix, 0)
    n, rem = np.divmod(pix, out_h * out_w)
    oh, ow = np.divmod(rem, out_w)

    r = np.arange(k0, k1)
    tap, cword = np.divmod(r, cw)
    kh, kw = np.divmod(tap, ksz)

    # weights: (rows, words)
    wrows = np.zeros((r1 - r0, k1 - k0), dtype=np.uint64)
    wrows[vrow] = wt[s_pl[vrow][:, None], o[vrow][:, None], kh[None, :], kw[None, :], cword[None, :]]

    # features: (cols, words), out-of-frame taps read pad_run
    ih = oh[:, None] * stride + kh[None, :] - pad
    iw = ow[:, None] * stride + kw[None, :] - pad
    inside = (ih >= 0) & (ih < height) & (iw >= 0) & (iw < width)
    xv = x[n[:, None], t_pl[:, None], np.clip(ih, 0, height - 1), np.clip(iw, 0, width - 1), cword[None, :]]
    xrows = np.where(inside, xv, pad_run[cword][None, :])

    part = _reduce(wrows, xrows, mode)
    part[~vrow, :] = 0
    part[:, ~vcol] = 0
    acc += part.astype(np.int32)
    return _quanta(r1 - r0, c1 - c0, k1 - k0)


def naive_gemm(a, b):
    """Scalar triple loop; the literal reference, slow by design."""
    a = np.asarray(a, dtype=np.int32)
    b = np.asarray(b, dtype=np.int32)
    m, k = a.shape
    n = b.shape[0]
    al = a.tolist()
    bl = b.tolist()
    out = np.zeros((m, n), dtype=np.int32)
    for i in range(m):
        ai = al[i]
        for j in range(n):
            bj = bl[j]
            s = 0
            for kk in range(k):
                s += ai[kk] * bj[kk]
            out[i, j] = s
    return out
