"""Pure numpy/scipy implementation of the hot kernels.

Reference backend: every function here has a compiled twin in ``_core.pyx``
with identical semantics and RNG-buffer consumption. The sequential scans are
deliberately written as explicit loops because Gibbs updates are order
dependent; this backend trades speed for clarity and portability.

Residual convention used by all scans: ``E = image - decode(state)``, kept
unmasked; observation masks enter only through likelihood inner products.
"""

import numpy as np
from scipy import signal

BACKEND = "numpy"


def conv_full(s, d):
    """Full 2D convolution of single-band maps: output (Hs+hd-1, Ws+wd-1)."""
    return signal.convolve2d(s, d, mode="full")


def correlate_valid(b, c):
    """Valid 2D correlation: A[i,j] = sum_{p,q} B[p+i, q+j] * C[p,q]."""
    return signal.correlate2d(b, c, mode="valid")


def unpool_apply(x, z, ph, pw):
    """Expand pooled values into blocks: one entry per block, or none (off).

    x: (bh, bw) pooled values; z: (bh, bw) int32 categories in {0..ph*pw},
    0 = off, m>0 = row-major position (m-1)//pw, (m-1)%pw within the block.
    """
    bh, bw = x.shape
    out = np.zeros((bh * ph, bw * pw), dtype=np.float64)
    for bi in range(bh):
        for bj in range(bw):
            m = int(z[bi, bj])
            if m > 0:
                out[bi * ph + (m - 1) // pw, bj * pw + (m - 1) % pw] = x[bi, bj]
    return out


def pool_adjoint(g, z, ph, pw):
    """Adjoint of unpool_apply: gather g at each block's active position."""
    bh, bw = z.shape
    out = np.zeros((bh, bw), dtype=np.float64)
    for bi in range(bh):
        for bj in range(bw):
            m = int(z[bi, bj])
            if m > 0:
                out[bi, bj] = g[bi * ph + (m - 1) // pw, bj * pw + (m - 1) % pw]
    return out


def _pos(bi, bj, m, ph, pw):
    return bi * ph + (m - 1) // pw, bj * pw + (m - 1) % pw


def scan_blocks_z(E, mask, D, normmap, V, z, theta, gamma_e, ph, pw, uniforms):
    """One systematic scan over all pooling blocks of one layer's indicators.

    The residual E lives on the plane where the kernels D apply (the data
    plane for layer 1 of the deep model, the layer plane during pretraining)
    and is updated in place, block by block.

    E: (C, H, W) residual, inout.      mask: (C, H, W) or None.
    D: (K, C, dh, dw) kernels.         normmap: (K, Sh, Sw) masked ||D||^2.
    V: (K, Sh, Sw) candidate value per position.
    z: (K, bh, bw) int32 inout.        theta: (K, B+1), index 0 = off.
    uniforms: (K, bh, bw) one draw per block.
    """
    K, C, dh, dw = D.shape
    _, bh, bw = z.shape
    B = ph * pw
    logth = np.full((K, B + 1), -np.inf)
    pos_ok = theta > 0.0
    logth[pos_ok] = np.log(theta[pos_ok])
    for k in range(K):
        Dk = D[k]
        for bi in range(bh):
            for bj in range(bw):
                cur = int(z[k, bi, bj])
                if cur > 0:
                    r, c = _pos(bi, bj, cur, ph, pw)
                    E[:, r:r + dh, c:c + dw] += V[k, r, c] * Dk
                lw = np.empty(B + 1)
                lw[0] = logth[k, 0]
                for m in range(1, B + 1):
                    r, c = _pos(bi, bj, m, ph, pw)
                    win = E[:, r:r + dh, c:c + dw]
                    if mask is not None:
                        inner = float(np.sum(win * mask[:, r:r + dh, c:c + dw] * Dk))
                    else:
                        inner = float(np.sum(win * Dk))
                    v = V[k, r, c]
                    lw[m] = logth[k, m] + gamma_e * (v * inner - 0.5 * v * v * normmap[k, r, c])
                lw -= lw.max()
                p = np.exp(lw)
                cdf = np.cumsum(p)
                u = uniforms[k, bi, bj] * cdf[-1]
                new = int(np.searchsorted(cdf, u, side="right"))
                new = min(new, B)
                z[k, bi, bj] = new
                if new > 0:
                    r, c = _pos(bi, bj, new, ph, pw)
                    E[:, r:r + dh, c:c + dw] -= V[k, r, c] * Dk


def _svm_terms(beta_r, beta_dot, yv, lam, gamma_svm, k, i, j, s_cur):
    """Precision and linear contributions of the SVM pseudo-likelihood to one
    top element, with the element's own contribution removed from each dot."""
    a = 0.0
    b = 0.0
    for c in range(beta_r.shape[0]):
        bij = beta_r[c, k, i, j]
        rest = beta_dot[c] - bij * s_cur
        g_over_lam = gamma_svm / lam[c]
        a += g_over_lam * bij * bij
        b += g_over_lam * yv[c] * bij * (1.0 + lam[c] - yv[c] * rest)
    return a, b


def _top_element_update(E, mask, F, r0, c0, k, i, j, z_top, s_top, w_top,
                        gamma_s, theta, gamma_e, beta_r, beta_dot, yv, lam,
                        gamma_svm, uniforms, normals, mode):
    """Shared inner step of the top-layer scans, given the data-plane
    footprint F (response of a unit at element (k,i,j)) at offset (r0,c0)."""
    C, fh, fw = F.shape
    s_cur = s_top[k, i, j]
    win = E[:, r0:r0 + fh, c0:c0 + fw]
    if s_cur != 0.0:
        win += s_cur * F
    if mask is not None:
        msk = mask[:, r0:r0 + fh, c0:c0 + fw]
        a_res = float(np.sum(F * F * msk))
        b_res = float(np.sum(win * F * msk))
    else:
        a_res = float(np.sum(F * F))
        b_res = float(np.sum(win * F))

    if mode == 1:
        # Test-time MAP threshold: value fixed at w_top, z = 1 iff theta*eta > 1-theta.
        v = w_top[k, i, j]
        log_eta = gamma_e * (v * b_res - 0.5 * v * v * a_res)
        th_on = theta[k, 1]
        th_off = theta[k, 0]
        on = (th_off <= 0.0) or (th_on > 0.0 and np.log(th_on) + log_eta > np.log(th_off))
        z_top[k, i, j] = 1 if on else 0
        s_new = v if on else 0.0
    else:
        a = gamma_e * a_res
        b = gamma_e * b_res
        if beta_r.shape[0] > 0:
            a_svm, b_svm = _svm_terms(beta_r, beta_dot, yv, lam, gamma_svm, k, i, j, s_cur)
            a += a_svm
            b += b_svm
        prec = gamma_s[k] + a
        th_on = theta[k, 1]
        th_off = theta[k, 0]
        if th_on <= 0.0:
            on = False
        elif th_off <= 0.0:
            on = True
        else:
            log_odds = (np.log(th_on) - np.log(th_off)
                        + 0.5 * (np.log(gamma_s[k]) - np.log(prec))
                        + b * b / (2.0 * prec))
            # p_on = sigmoid(log_odds), evaluated stably
            if log_odds >= 0:
                p_on = 1.0 / (1.0 + np.exp(-log_odds))
            else:
                e = np.exp(log_odds)
                p_on = e / (1.0 + e)
            on = uniforms[k, i, j] < p_on
        if on:
            s_new = b / prec + normals[k, i, j] / np.sqrt(prec)
            z_top[k, i, j] = 1
        else:
            s_new = 0.0
            z_top[k, i, j] = 0

    s_top[k, i, j] = s_new
    if s_new != 0.0:
        win -= s_new * F
    if beta_r.shape[0] > 0 and s_new != s_cur:
        for c in range(beta_r.shape[0]):
            beta_dot[c] += beta_r[c, k, i, j] * (s_new - s_cur)


def scan_top_l1(E, mask, D1, z_top, s_top, w_top, gamma_s, theta, gamma_e,
                beta_r, beta_dot, yv, lam, gamma_svm, uniforms, normals, mode):
    """Top-layer scan for a one-layer net: footprints are the kernels."""
    K, C, dh, dw = D1.shape
    _, mh, mw = s_top.shape
    for k in range(K):
        F = D1[k]
        for i in range(mh):
            for j in range(mw):
                _top_element_update(E, mask, F, i, j, k, i, j, z_top, s_top,
                                    w_top, gamma_s, theta, gamma_e, beta_r,
                                    beta_dot, yv, lam, gamma_svm, uniforms,
                                    normals, mode)


def scan_top_l2(E, mask, D1, D2, z1, ph, pw, z_top, s_top, w_top, gamma_s,
                theta, gamma_e, beta_r, beta_dot, yv, lam, gamma_svm,
                uniforms, normals, mode):
    """Top-layer scan for a two-layer net.

    The footprint of element (k2,i,j) of the top map is built on the fly:
    D2[k2] lands on the middle plane at offset (i,j), each landed pixel goes
    through the layer-1 indicator z1 (or vanishes, when its block is off) and
    is then convolved with the matching layer-1 kernel.
    """
    K2, K1, d2h, d2w = D2.shape
    _, C, d1h, d1w = D1.shape
    _, mh, mw = s_top.shape
    fh = d2h * ph + d1h - 1
    fw = d2w * pw + d1w - 1
    for k2 in range(K2):
        for i in range(mh):
            for j in range(mw):
                F = np.zeros((C, fh, fw))
                for k1 in range(K1):
                    for p in range(d2h):
                        for q in range(d2w):
                            m = int(z1[k1, i + p, j + q])
                            if m == 0:
                                continue
                            val = D2[k2, k1, p, q]
                            if val == 0.0:
                                continue
                            # position within the footprint window
                            r = p * ph + (m - 1) // pw
                            c = q * pw + (m - 1) % pw
                            F[:, r:r + d1h, c:c + d1w] += val * D1[k1]
                _top_element_update(E, mask, F, i * ph, j * pw, k2, i, j,
                                    z_top, s_top, w_top, gamma_s, theta,
                                    gamma_e, beta_r, beta_dot, yv, lam,
                                    gamma_svm, uniforms, normals, mode)


def scan_active_w(E, mask, D, z, W, gamma_e, gamma_w, ph, pw, normals):
    """Pretraining scan of the Gaussian magnitudes at active positions.

    Positions whose block is off keep whatever W the caller assigned (the
    prior refresh happens outside, vectorized); active positions are updated
    sequentially since they interact through the layer residual E.

    E: (C, H, W) inout; D: (K, C, dh, dw); z: (K, bh, bw) int32;
    W: (K, Sh, Sw) inout; gamma_w: (K,); normals: (K, bh, bw).
    """
    K, C, dh, dw = D.shape
    _, bh, bw = z.shape
    for k in range(K):
        Dk = D[k]
        if mask is not None:
            dnorm = None
        else:
            dnorm = float(np.sum(Dk * Dk))
        for bi in range(bh):
            for bj in range(bw):
                m = int(z[k, bi, bj])
                if m == 0:
                    continue
                r, c = _pos(bi, bj, m, ph, pw)
                w_cur = W[k, r, c]
                win = E[:, r:r + dh, c:c + dw]
                if w_cur != 0.0:
                    win += w_cur * Dk
                if mask is not None:
                    msk = mask[:, r:r + dh, c:c + dw]
                    a_res = float(np.sum(Dk * Dk * msk))
                    b_res = float(np.sum(win * Dk * msk))
                else:
                    a_res = dnorm
                    b_res = float(np.sum(win * Dk))
                prec = gamma_w[k] + gamma_e * a_res
                mu = gamma_e * b_res / prec
                w_new = mu + normals[k, bi, bj] / np.sqrt(prec)
                W[k, r, c] = w_new
                win -= w_new * Dk
