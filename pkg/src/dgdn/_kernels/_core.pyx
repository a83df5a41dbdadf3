# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled implementation of the hot kernels.

Mirrors ``_impl_numpy`` exactly: same signatures, same update order, same
RNG-buffer consumption. See that module for the semantics of each routine.
"""

import numpy as np

cimport cython
from libc.math cimport exp, log, sqrt

BACKEND = "cython"

cdef double NEG_INF = float("-inf")


def conv_full(double[:, ::1] s, double[:, ::1] d):
    cdef Py_ssize_t Hs = s.shape[0], Ws = s.shape[1]
    cdef Py_ssize_t hd = d.shape[0], wd = d.shape[1]
    out_np = np.zeros((Hs + hd - 1, Ws + wd - 1), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t i, j, p, q
    cdef double v
    with nogil:
        for i in range(Hs):
            for j in range(Ws):
                v = s[i, j]
                if v == 0.0:
                    continue
                for p in range(hd):
                    for q in range(wd):
                        out[i + p, j + q] += v * d[p, q]
    return out_np


def correlate_valid(double[:, ::1] b, double[:, ::1] c):
    cdef Py_ssize_t Hb = b.shape[0], Wb = b.shape[1]
    cdef Py_ssize_t hc = c.shape[0], wc = c.shape[1]
    out_np = np.zeros((Hb - hc + 1, Wb - wc + 1), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t i, j, p, q
    cdef double acc
    with nogil:
        for i in range(Hb - hc + 1):
            for j in range(Wb - wc + 1):
                acc = 0.0
                for p in range(hc):
                    for q in range(wc):
                        acc += b[i + p, j + q] * c[p, q]
                out[i, j] = acc
    return out_np


def unpool_apply(double[:, ::1] x, int[:, ::1] z, int ph, int pw):
    cdef Py_ssize_t bh = x.shape[0], bw = x.shape[1]
    out_np = np.zeros((bh * ph, bw * pw), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t bi, bj
    cdef int m
    for bi in range(bh):
        for bj in range(bw):
            m = z[bi, bj]
            if m > 0:
                out[bi * ph + (m - 1) // pw, bj * pw + (m - 1) % pw] = x[bi, bj]
    return out_np


def pool_adjoint(double[:, ::1] g, int[:, ::1] z, int ph, int pw):
    cdef Py_ssize_t bh = z.shape[0], bw = z.shape[1]
    out_np = np.zeros((bh, bw), dtype=np.float64)
    cdef double[:, ::1] out = out_np
    cdef Py_ssize_t bi, bj
    cdef int m
    for bi in range(bh):
        for bj in range(bw):
            m = z[bi, bj]
            if m > 0:
                out[bi, bj] = g[bi * ph + (m - 1) // pw, bj * pw + (m - 1) % pw]
    return out_np


def scan_blocks_z(double[:, :, ::1] E, mask, double[:, :, :, ::1] D,
                  double[:, :, ::1] normmap, double[:, :, ::1] V,
                  int[:, :, ::1] z, double[:, ::1] theta, double gamma_e,
                  int ph, int pw, double[:, :, ::1] uniforms):
    cdef Py_ssize_t K = D.shape[0], C = D.shape[1]
    cdef Py_ssize_t dh = D.shape[2], dw = D.shape[3]
    cdef Py_ssize_t bh = z.shape[1], bw = z.shape[2]
    cdef int B = ph * pw
    cdef bint use_mask = mask is not None
    cdef double[:, :, ::1] msk
    if use_mask:
        msk = mask
    else:
        msk = E  # unused; placeholder to satisfy typing

    lw_np = np.zeros(B + 1, dtype=np.float64)
    cdef double[::1] lw = lw_np
    logth_np = np.where(np.asarray(theta) > 0.0,
                        np.log(np.maximum(np.asarray(theta), 1e-300)),
                        -np.inf)
    cdef double[:, ::1] logth = logth_np

    cdef Py_ssize_t k, bi, bj, p, q, cc
    cdef int cur, m, new
    cdef Py_ssize_t r, c
    cdef double v, inner, mx, total, acc, u

    for k in range(K):
        with nogil:
            for bi in range(bh):
                for bj in range(bw):
                    cur = z[k, bi, bj]
                    if cur > 0:
                        r = bi * ph + (cur - 1) // pw
                        c = bj * pw + (cur - 1) % pw
                        v = V[k, r, c]
                        for cc in range(C):
                            for p in range(dh):
                                for q in range(dw):
                                    E[cc, r + p, c + q] += v * D[k, cc, p, q]
                    lw[0] = logth[k, 0]
                    for m in range(1, B + 1):
                        r = bi * ph + (m - 1) // pw
                        c = bj * pw + (m - 1) % pw
                        inner = 0.0
                        if use_mask:
                            for cc in range(C):
                                for p in range(dh):
                                    for q in range(dw):
                                        inner += (E[cc, r + p, c + q]
                                                  * msk[cc, r + p, c + q]
                                                  * D[k, cc, p, q])
                        else:
                            for cc in range(C):
                                for p in range(dh):
                                    for q in range(dw):
                                        inner += E[cc, r + p, c + q] * D[k, cc, p, q]
                        v = V[k, r, c]
                        lw[m] = logth[k, m] + gamma_e * (v * inner
                                                         - 0.5 * v * v * normmap[k, r, c])
                    mx = lw[0]
                    for m in range(1, B + 1):
                        if lw[m] > mx:
                            mx = lw[m]
                    total = 0.0
                    for m in range(B + 1):
                        lw[m] = exp(lw[m] - mx)
                        total += lw[m]
                    u = uniforms[k, bi, bj] * total
                    acc = 0.0
                    new = B
                    for m in range(B + 1):
                        acc += lw[m]
                        if u < acc:
                            new = m
                            break
                    z[k, bi, bj] = new
                    if new > 0:
                        r = bi * ph + (new - 1) // pw
                        c = bj * pw + (new - 1) % pw
                        v = V[k, r, c]
                        for cc in range(C):
                            for p in range(dh):
                                for q in range(dw):
                                    E[cc, r + p, c + q] -= v * D[k, cc, p, q]


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


@cython.boundscheck(False)
cdef void _top_update(double[:, :, ::1] E, bint use_mask, double[:, :, ::1] msk,
                      double[:, :, ::1] F, Py_ssize_t r0, Py_ssize_t c0,
                      Py_ssize_t fh, Py_ssize_t fw,
                      Py_ssize_t k, Py_ssize_t i, Py_ssize_t j,
                      int[:, :, ::1] z_top, double[:, :, ::1] s_top,
                      double[:, :, ::1] w_top, double[::1] gamma_s,
                      double[:, ::1] theta, double gamma_e,
                      double[:, :, :, ::1] beta_r, double[::1] beta_dot,
                      double[::1] yv, double[::1] lam, double gamma_svm,
                      double[:, :, ::1] uniforms, double[:, :, ::1] normals,
                      int mode) nogil:
    cdef Py_ssize_t C = E.shape[0]
    cdef Py_ssize_t cc, p, q, cl
    cdef Py_ssize_t ncls = beta_r.shape[0]
    cdef double s_cur = s_top[k, i, j]
    cdef double a_res = 0.0, b_res = 0.0
    cdef double a, b, prec, th_on, th_off, log_odds, p_on, s_new
    cdef double v, log_eta, bij, rest, gl
    cdef bint on

    if s_cur != 0.0:
        for cc in range(C):
            for p in range(fh):
                for q in range(fw):
                    E[cc, r0 + p, c0 + q] += s_cur * F[cc, p, q]
    if use_mask:
        for cc in range(C):
            for p in range(fh):
                for q in range(fw):
                    v = F[cc, p, q] * msk[cc, r0 + p, c0 + q]
                    a_res += F[cc, p, q] * v
                    b_res += E[cc, r0 + p, c0 + q] * v
    else:
        for cc in range(C):
            for p in range(fh):
                for q in range(fw):
                    v = F[cc, p, q]
                    a_res += v * v
                    b_res += E[cc, r0 + p, c0 + q] * v

    th_on = theta[k, 1]
    th_off = theta[k, 0]
    if mode == 1:
        v = w_top[k, i, j]
        log_eta = gamma_e * (v * b_res - 0.5 * v * v * a_res)
        on = (th_off <= 0.0) or (th_on > 0.0 and log(th_on) + log_eta > log(th_off))
        if on:
            z_top[k, i, j] = 1
            s_new = v
        else:
            z_top[k, i, j] = 0
            s_new = 0.0
    else:
        a = gamma_e * a_res
        b = gamma_e * b_res
        for cl in range(ncls):
            bij = beta_r[cl, k, i, j]
            rest = beta_dot[cl] - bij * s_cur
            gl = gamma_svm / lam[cl]
            a += gl * bij * bij
            b += gl * yv[cl] * bij * (1.0 + lam[cl] - yv[cl] * rest)
        prec = gamma_s[k] + a
        if th_on <= 0.0:
            on = False
        elif th_off <= 0.0:
            on = True
        else:
            log_odds = (log(th_on) - log(th_off)
                        + 0.5 * (log(gamma_s[k]) - log(prec))
                        + b * b / (2.0 * prec))
            p_on = _sigmoid(log_odds)
            on = uniforms[k, i, j] < p_on
        if on:
            s_new = b / prec + normals[k, i, j] / sqrt(prec)
            z_top[k, i, j] = 1
        else:
            s_new = 0.0
            z_top[k, i, j] = 0

    s_top[k, i, j] = s_new
    if s_new != 0.0:
        for cc in range(C):
            for p in range(fh):
                for q in range(fw):
                    E[cc, r0 + p, c0 + q] -= s_new * F[cc, p, q]
    if ncls > 0 and s_new != s_cur:
        for cl in range(ncls):
            beta_dot[cl] += beta_r[cl, k, i, j] * (s_new - s_cur)


def scan_top_l1(double[:, :, ::1] E, mask, double[:, :, :, ::1] D1,
                int[:, :, ::1] z_top, double[:, :, ::1] s_top,
                double[:, :, ::1] w_top, double[::1] gamma_s,
                double[:, ::1] theta, double gamma_e,
                double[:, :, :, ::1] beta_r, double[::1] beta_dot,
                double[::1] yv, double[::1] lam, double gamma_svm,
                double[:, :, ::1] uniforms, double[:, :, ::1] normals, int mode):
    cdef Py_ssize_t K = D1.shape[0], C = D1.shape[1]
    cdef Py_ssize_t dh = D1.shape[2], dw = D1.shape[3]
    cdef Py_ssize_t mh = s_top.shape[1], mw = s_top.shape[2]
    cdef bint use_mask = mask is not None
    cdef double[:, :, ::1] msk
    msk = mask if use_mask else E
    cdef Py_ssize_t k, i, j
    for k in range(K):
        with nogil:
            for i in range(mh):
                for j in range(mw):
                    _top_update(E, use_mask, msk, D1[k], i, j, dh, dw, k, i, j,
                                z_top, s_top, w_top, gamma_s, theta, gamma_e,
                                beta_r, beta_dot, yv, lam, gamma_svm,
                                uniforms, normals, mode)


def scan_top_l2(double[:, :, ::1] E, mask, double[:, :, :, ::1] D1,
                double[:, :, :, ::1] D2, int[:, :, ::1] z1, int ph, int pw,
                int[:, :, ::1] z_top, double[:, :, ::1] s_top,
                double[:, :, ::1] w_top, double[::1] gamma_s,
                double[:, ::1] theta, double gamma_e,
                double[:, :, :, ::1] beta_r, double[::1] beta_dot,
                double[::1] yv, double[::1] lam, double gamma_svm,
                double[:, :, ::1] uniforms, double[:, :, ::1] normals, int mode):
    cdef Py_ssize_t K2 = D2.shape[0], K1 = D2.shape[1]
    cdef Py_ssize_t d2h = D2.shape[2], d2w = D2.shape[3]
    cdef Py_ssize_t C = D1.shape[1], d1h = D1.shape[2], d1w = D1.shape[3]
    cdef Py_ssize_t mh = s_top.shape[1], mw = s_top.shape[2]
    cdef Py_ssize_t fh = d2h * ph + d1h - 1
    cdef Py_ssize_t fw = d2w * pw + d1w - 1
    cdef bint use_mask = mask is not None
    cdef double[:, :, ::1] msk
    msk = mask if use_mask else E

    F_np = np.zeros((C, fh, fw), dtype=np.float64)
    cdef double[:, :, ::1] F = F_np

    cdef Py_ssize_t k2, i, j, k1, p, q, cc, rr, qq
    cdef int m
    cdef Py_ssize_t r, c
    cdef double val

    for k2 in range(K2):
        with nogil:
            for i in range(mh):
                for j in range(mw):
                    for cc in range(C):
                        for rr in range(fh):
                            for qq in range(fw):
                                F[cc, rr, qq] = 0.0
                    for k1 in range(K1):
                        for p in range(d2h):
                            for q in range(d2w):
                                m = z1[k1, i + p, j + q]
                                if m == 0:
                                    continue
                                val = D2[k2, k1, p, q]
                                if val == 0.0:
                                    continue
                                r = p * ph + (m - 1) // pw
                                c = q * pw + (m - 1) % pw
                                for cc in range(C):
                                    for rr in range(d1h):
                                        for qq in range(d1w):
                                            F[cc, r + rr, c + qq] += val * D1[k1, cc, rr, qq]
                    _top_update(E, use_mask, msk, F, i * ph, j * pw, fh, fw,
                                k2, i, j, z_top, s_top, w_top, gamma_s, theta,
                                gamma_e, beta_r, beta_dot, yv, lam, gamma_svm,
                                uniforms, normals, mode)


def scan_active_w(double[:, :, ::1] E, mask, double[:, :, :, ::1] D,
                  int[:, :, ::1] z, double[:, :, ::1] W, double gamma_e,
                  double[::1] gamma_w, int ph, int pw,
                  double[:, :, ::1] normals):
    cdef Py_ssize_t K = D.shape[0], C = D.shape[1]
    cdef Py_ssize_t dh = D.shape[2], dw = D.shape[3]
    cdef Py_ssize_t bh = z.shape[1], bw = z.shape[2]
    cdef bint use_mask = mask is not None
    cdef double[:, :, ::1] msk
    msk = mask if use_mask else E

    cdef Py_ssize_t k, bi, bj, cc, p, q
    cdef int m
    cdef Py_ssize_t r, c
    cdef double dnorm, w_cur, a_res, b_res, prec, w_new, v

    for k in range(K):
        dnorm = 0.0
        with nogil:
            for cc in range(C):
                for p in range(dh):
                    for q in range(dw):
                        dnorm += D[k, cc, p, q] * D[k, cc, p, q]
            for bi in range(bh):
                for bj in range(bw):
                    m = z[k, bi, bj]
                    if m == 0:
                        continue
                    r = bi * ph + (m - 1) // pw
                    c = bj * pw + (m - 1) % pw
                    w_cur = W[k, r, c]
                    if w_cur != 0.0:
                        for cc in range(C):
                            for p in range(dh):
                                for q in range(dw):
                                    E[cc, r + p, c + q] += w_cur * D[k, cc, p, q]
                    a_res = 0.0
                    b_res = 0.0
                    if use_mask:
                        for cc in range(C):
                            for p in range(dh):
                                for q in range(dw):
                                    v = D[k, cc, p, q] * msk[cc, r + p, c + q]
                                    a_res += D[k, cc, p, q] * v
                                    b_res += E[cc, r + p, c + q] * v
                    else:
                        a_res = dnorm
                        for cc in range(C):
                            for p in range(dh):
                                for q in range(dw):
                                    b_res += E[cc, r + p, c + q] * D[k, cc, p, q]
                    prec = gamma_w[k] + gamma_e * a_res
                    w_new = gamma_e * b_res / prec + normals[k, bi, bj] / sqrt(prec)
                    W[k, r, c] = w_new
                    for cc in range(C):
                        for p in range(dh):
                            for q in range(dw):
                                E[cc, r + p, c + q] -= w_new * D[k, cc, p, q]
