# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled popcount kernels.

Blocks are walked in 8x8 output tiles; within a tile every (row, column)
pair sweeps the whole K step (a run of 128-bit chunks) with its sum held in
a register.  Each kernel returns the number of 8x8x128 quanta executed.
Signatures match :mod:`apbit._kernels_py`.
"""

import numpy as np

from libc.stdint cimport int32_t, int64_t, uint64_t
from libc.stdlib cimport free, malloc

cdef extern from *:
    int popcount64 "__builtin_popcountll"(unsigned long long) nogil

NAME = "compiled"

MODE_AND = 0
MODE_XOR = 1
MODE_CASE3 = 2
MODE_CASE3_SWAPPED = 3


cdef inline int32_t _popc_run(const uint64_t* x, Py_ssize_t n) noexcept nogil:
    cdef int32_t s = 0
    cdef Py_ssize_t w
    for w in range(n):
        s += popcount64(x[w])
    return s


cdef inline int32_t _and_run(const uint64_t* x, const uint64_t* y, Py_ssize_t n) noexcept nogil:
    cdef int32_t s = 0
    cdef Py_ssize_t w
    for w in range(n):
        s += popcount64(x[w] & y[w])
    return s


cdef inline int32_t _xor_run(const uint64_t* x, const uint64_t* y, Py_ssize_t n) noexcept nogil:
    cdef int32_t s = 0
    cdef Py_ssize_t w
    for w in range(n):
        s += popcount64(x[w] ^ y[w])
    return s


cdef void _tile(const uint64_t** ap, const uint64_t** bp, int32_t* acc, Py_ssize_t ld,
                Py_ssize_t nw, int mode) noexcept nogil:
    """8x8 tile over ``nw`` words; NULL row pointers are padding rows."""
    cdef Py_ssize_t i, j
    cdef int32_t corr[8]
    cdef int32_t* out
    cdef const uint64_t* arow
    cdef uint64_t a0, a1
    if nw == 2:
        # the bmma quantum itself: two words per row, held in registers
        if mode == 2:
            for j in range(8):
                corr[j] = popcount64(bp[j][0]) + popcount64(bp[j][1]) if bp[j] != NULL else 0
        for i in range(8):
            if ap[i] == NULL:
                continue
            a0 = ap[i][0]
            a1 = ap[i][1]
            out = acc + i * ld
            if mode == 0:
                for j in range(8):
                    if bp[j] != NULL:
                        out[j] += popcount64(a0 & bp[j][0]) + popcount64(a1 & bp[j][1])
            elif mode == 1:
                for j in range(8):
                    if bp[j] != NULL:
                        out[j] += 128 - 2 * (popcount64(a0 ^ bp[j][0]) + popcount64(a1 ^ bp[j][1]))
            elif mode == 2:
                for j in range(8):
                    if bp[j] != NULL:
                        out[j] += 2 * (popcount64(a0 & bp[j][0]) + popcount64(a1 & bp[j][1])) - corr[j]
            else:
                corr[0] = popcount64(a0) + popcount64(a1)
                for j in range(8):
                    if bp[j] != NULL:
                        out[j] += 2 * (popcount64(a0 & bp[j][0]) + popcount64(a1 & bp[j][1])) - corr[0]
        return
    if mode == 2:
        for j in range(8):
            corr[j] = _popc_run(bp[j], nw) if bp[j] != NULL else 0
    for i in range(8):
        arow = ap[i]
        if arow == NULL:
            continue
        out = acc + i * ld
        if mode == 0:
            for j in range(8):
                if bp[j] != NULL:
                    out[j] += _and_run(arow, bp[j], nw)
        elif mode == 1:
            for j in range(8):
                if bp[j] != NULL:
                    out[j] += <int32_t>(64 * nw) - 2 * _xor_run(arow, bp[j], nw)
        elif mode == 2:
            for j in range(8):
                if bp[j] != NULL:
                    out[j] += 2 * _and_run(arow, bp[j], nw) - corr[j]
        else:
            corr[0] = _popc_run(arow, nw)
            for j in range(8):
                if bp[j] != NULL:
                    out[j] += 2 * _and_run(arow, bp[j], nw) - corr[0]


def gemm_block(const uint64_t[:, :, ::1] a, const uint64_t[:, :, ::1] b,
               int32_t[:, ::1] acc,
               Py_ssize_t r0, Py_ssize_t r1, Py_ssize_t c0, Py_ssize_t c1,
               Py_ssize_t w0, Py_ssize_t w1,
               Py_ssize_t m8, Py_ssize_t n8, int mode):
    """acc[v - r0, u - c0] += sum over words [w0, w1) of op(A_v, B_u).

    Virtual row v addresses plane v // m8, row v % m8 of ``a``; rows past
    the logical extent are padding.  Columns likewise for ``b``.
    """
    cdef Py_ssize_t m = a.shape[1], n = b.shape[1], wd = a.shape[2]
    cdef Py_ssize_t tr, tc, i, j, v, u, row
    cdef Py_ssize_t nw = w1 - w0, chunks = (w1 - w0 + 1) // 2
    cdef Py_ssize_t ld = acc.shape[1]
    cdef const uint64_t* abase = &a[0, 0, 0]
    cdef const uint64_t* bbase = &b[0, 0, 0]
    cdef int32_t* accp = &acc[0, 0]
    cdef const uint64_t* ap[8]
    cdef const uint64_t* bp[8]
    cdef int32_t scratch[64]
    cdef int64_t tiles = 0
    cdef bint partial
    if nw <= 0:
        return 0
    with nogil:
        for tr in range(r0, r1, 8):
            for i in range(8):
                v = tr + i
                row = v % m8
                ap[i] = abase + ((v // m8) * m + row) * wd + w0 if (v < r1 and row < m) else NULL
            for tc in range(c0, c1, 8):
                for j in range(8):
                    u = tc + j
                    row = u % n8
                    bp[j] = bbase + ((u // n8) * n + row) * wd + w0 if (u < c1 and row < n) else NULL
                tiles += chunks
                partial = tr + 8 > r1 or tc + 8 > c1
                if partial:
                    for i in range(64):
                        scratch[i] = 0
                    _tile(ap, bp, scratch, 8, nw, mode)
                    for i in range(8):
                        for j in range(8):
                            if tr + i < r1 and tc + j < c1:
                                accp[(tr + i - r0) * ld + tc + j - c0] += scratch[i * 8 + j]
                else:
                    _tile(ap, bp, accp + (tr - r0) * ld + (tc - c0), ld, nw, mode)
    return tiles


def conv_block(const uint64_t[:, :, :, :, ::1] wt, const uint64_t[:, :, :, :, ::1] x,
               const uint64_t[::1] pad_run, int32_t[:, ::1] acc,
               Py_ssize_t r0, Py_ssize_t r1, Py_ssize_t c0, Py_ssize_t c1,
               Py_ssize_t k0, Py_ssize_t k1,
               Py_ssize_t co8, Py_ssize_t pix8, Py_ssize_t out_h, Py_ssize_t out_w,
               Py_ssize_t stride, Py_ssize_t pad, int mode):
    """Direct convolution over channel-major runs.

    ``wt`` is (p, C_out, K, K, Cw) and ``x`` is (N, q, H, W, Cw).  Reduction
    word r maps to tap r // Cw and channel word r % Cw; out-of-frame taps
    read ``pad_run``.  Weight runs are contiguous along r; feature words are
    gathered per column into a per-tile buffer.
    """
    cdef Py_ssize_t p = wt.shape[0], c_out = wt.shape[1], ksz = wt.shape[2], cw = wt.shape[4]
    cdef Py_ssize_t batch = x.shape[0], q = x.shape[1], height = x.shape[2], width = x.shape[3]
    cdef Py_ssize_t npix = batch * out_h * out_w, red = ksz * ksz * cw
    cdef Py_ssize_t tr, tc, i, j, r, v, u, o, t_pl, pix, nn, oh, ow, tap, cword, ih, iw
    cdef Py_ssize_t nw = k1 - k0, chunks = (k1 - k0 + 1) // 2
    cdef Py_ssize_t ld = acc.shape[1]
    cdef const uint64_t* wbase = &wt[0, 0, 0, 0, 0]
    cdef const uint64_t* xbase = &x[0, 0, 0, 0, 0]
    cdef int32_t* accp = &acc[0, 0]
    cdef const uint64_t* ap[8]
    cdef const uint64_t* bp[8]
    cdef int32_t scratch[64]
    cdef int64_t tiles = 0
    cdef uint64_t* buf
    if nw <= 0:
        return 0
    buf = <uint64_t*>malloc(8 * nw * sizeof(uint64_t))
    if buf == NULL:
        raise MemoryError()
    try:
        with nogil:
            for tr in range(r0, r1, 8):
                for i in range(8):
                    v = tr + i
                    o = v % co8
                    ap[i] = wbase + ((v // co8) * c_out + o) * red + k0 if (v < r1 and o < c_out) else NULL
                for tc in range(c0, c1, 8):
                    for j in range(8):
                        u = tc + j
                        pix = u % pix8
                        bp[j] = NULL
                        if u >= c1 or pix >= npix:
                            continue
                        t_pl = u // pix8
                        nn = pix // (out_h * out_w)
                        oh = (pix // out_w) % out_h
                        ow = pix % out_w
                        for r in range(k0, k1):
                            tap = r // cw
                            cword = r - tap * cw
                            ih = oh * stride + tap // ksz - pad
                            iw = ow * stride + tap % ksz - pad
                            if ih < 0 or ih >= height or iw < 0 or iw >= width:
                                buf[j * nw + r - k0] = pad_run[cword]
                            else:
                                buf[j * nw + r - k0] = xbase[(((nn * q + t_pl) * height + ih) * width + iw) * cw + cword]
                        bp[j] = buf + j * nw
                    tiles += chunks
                    for i in range(64):
                        scratch[i] = 0
                    _tile(ap, bp, scratch, 8, nw, mode)
                    for i in range(8):
                        for j in range(8):
                            if tr + i < r1 and tc + j < c1:
                                accp[(tr + i - r0) * ld + tc + j - c0] += scratch[i * 8 + j]
    finally:
        free(buf)
    return tiles


def naive_gemm(const int32_t[:, ::1] a, const int32_t[:, ::1] b):
    """Scalar triple loop: out[i, j] = sum_k a[i, k] * b[j, k] in int32."""
    cdef Py_ssize_t m = a.shape[0], n = b.shape[0], k = a.shape[1]
    cdef Py_ssize_t i, j, kk
    cdef int32_t s
    out = np.zeros((m, n), dtype=np.int32)
    cdef int32_t[:, ::1] o = out
    with nogil:
        for i in range(m):
            for j in range(n):
                s = 0
                for kk in range(k):
                    s += a[i, kk] * b[j, kk]
                o[i, j] = s
    return out
