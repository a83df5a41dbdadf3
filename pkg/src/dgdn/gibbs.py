"""Full-conditional samplers and the per-image Gibbs sweep.

Every conditional is derived from the residual decomposition: as a function
of one scalar site x (a dictionary pixel or a feature weight) the residual is
affine, E(x) = C - x*F, where F is the site's data-plane footprint. With a
Gaussian prior N(m0, 1/t0) the conditional is Gaussian with

    precision = t0 + gamma_e * ||F||^2,
    mean      = (t0*m0 + gamma_e * <C, F>) / precision,

summed over images where the site is shared. Indicator categories are scored
by the exact residual-likelihood ratio in log space,

    log eta_m = gamma_e * (v * <E_off, F_m> - v^2/2 * ||F_m||^2),

with the off state as the zero reference; SVM coupling adds the analogous
Gaussian-form terms. Observation masks enter only through these inner
products; the cached residual is always the full-plane one.

The printed forms of the conditionals drop some gamma factors, the batch sum
and one sign; the derivation here is verified against brute-force density and
enumeration oracles in the test suite.
"""

import numpy as np
from scipy import signal

from . import _kernels, model, tensor
from .distributions import sample_dirichlet, sample_gamma
from .errors import NumericsError, ShapeError
from .svm import sample_lambda


def features_from_top(s_top):
    """Unfold the top maps into the SVM feature vector (bias appended)."""
    return np.concatenate([np.asarray(s_top, dtype=np.float64).ravel(), [1.0]])


class ImageSampler:
    """Owns one image's latent state, residual cache, and scan plumbing.

    The cached residual E (full plane, unmasked) is updated incrementally by
    every single-site move; `cache_error` measures drift against a fresh
    recomputation. The auxiliary (C, F) / footprint pairs are built on the
    fly per site.
    """

    def __init__(self, image, spec, dicts, hypers, state=None, mask=None,
                 label=None):
        self.image = tensor.as_tensor3(image, "image")
        want = (spec.input_bands, spec.input_h, spec.input_w)
        if self.image.shape != want:
            raise ShapeError(f"image shape {self.image.shape}, spec wants {want}")
        self.spec = spec
        self.dicts = dicts
        self.hypers = hypers
        self.mask = None if mask is None else tensor.as_tensor3(mask, "mask")
        self.label = label  # class in 1..C or None
        self.state = state if state is not None else model.init_latent(
            spec, supervised=label is not None)
        self.xs = None
        self.E = None

    # -- residual cache ----------------------------------------------------

    def refresh(self):
        """Recompute the decode chain and the residual from the state."""
        self.xs, self.ss = model.decode_chain(self.state.s_top, self.state.z,
                                              self.dicts, self.spec)
        self.E = self.image - self.xs[0]

    def cache_error(self):
        """Max |cached E - recomputed E| (the ResidualCache invariant)."""
        fresh = self.image - model.generative_decode(
            self.state.s_top, self.state.z, self.dicts, self.spec)
        return float(np.abs(self.E - fresh).max())

    def obs_count(self):
        return float(self.image.size if self.mask is None else self.mask.sum())

    def masked_sq(self, arr):
        if self.mask is None:
            return float(np.sum(arr * arr))
        return float(np.sum(arr * arr * self.mask))

    # -- footprints ----------------------------------------------------------

    def footprint(self, li, k, u, v):
        """Data-plane response of a unit at position (u, v) of S^li[k];
        returns (window, r0, c0)."""
        D = self.dicts.layers[li]
        base = D[k].copy()  # (bands_below, dh, dw) perturbation of the X^li plane
        return self._project_window(li, base, u, v)

    def _project_window(self, li, win, r0, c0):
        """Push a windowed perturbation of the X^li plane down to the data
        plane through the current indicators."""
        spec, state, dicts = self.spec, self.state, self.dicts
        for lj in range(li - 1, -1, -1):
            layer = spec.layers[lj]
            ph, pw = layer.pool_h, layer.pool_w
            K, wh, ww = win.shape
            D = dicts.layers[lj]
            C, dh, dw = D.shape[1], D.shape[2], D.shape[3]
            new = np.zeros((C, wh * ph + dh - 1, ww * pw + dw - 1))
            for m in range(K):
                if not np.any(win[m]):
                    continue
                zblk = state.z[lj][m][r0:r0 + wh, c0:c0 + ww]
                s = _kernels.unpool_apply(np.ascontiguousarray(win[m]),
                                          np.ascontiguousarray(zblk), ph, pw)
                for c in range(C):
                    new[c] += _kernels.conv_full(s, D[m, c])
            win = new
            r0, c0 = r0 * ph, c0 * pw
        return win, r0, c0

    def _inner(self, win, r0, c0):
        """Masked <E, win> over the window at (r0, c0)."""
        C, wh, ww = win.shape
        sl = self.E[:, r0:r0 + wh, c0:c0 + ww]
        if self.mask is None:
            return float(np.sum(sl * win))
        return float(np.sum(sl * win * self.mask[:, r0:r0 + wh, c0:c0 + ww]))

    def _norm2(self, win, r0, c0):
        C, wh, ww = win.shape
        if self.mask is None:
            return float(np.sum(win * win))
        return float(np.sum(win * win * self.mask[:, r0:r0 + wh, c0:c0 + ww]))

    def add_to_e(self, coeff, win, r0, c0):
        C, wh, ww = win.shape
        self.E[:, r0:r0 + wh, c0:c0 + ww] += coeff * win

    # -- indicator updates ---------------------------------------------------

    def unpool_indicator_probs(self, li, k, bi, bj):
        """Posterior category probabilities for one pooling block, built from
        the residual-likelihood ratios; the residual must currently exclude
        the block (call `detach_block` first)."""
        spec, state = self.spec, self.state
        layer = spec.layers[li]
        ph, pw = layer.pool_h, layer.pool_w
        B = ph * pw
        val = self.xs[li + 1][k][bi, bj]
        theta = state.theta[li][k]
        logw = np.full(B + 1, -np.inf)
        if theta[0] > 0:
            logw[0] = np.log(theta[0])
        for m in range(1, B + 1):
            if theta[m] <= 0:
                continue
            u = bi * ph + (m - 1) // pw
            v = bj * pw + (m - 1) % pw
            F, r0, c0 = self.footprint(li, k, u, v)
            ge = state.gamma_e
            logw[m] = np.log(theta[m]) + ge * (
                val * self._inner(F, r0, c0)
                - 0.5 * val * val * self._norm2(F, r0, c0))
        logw -= logw.max()
        p = np.exp(logw)
        return p / p.sum()

    def detach_block(self, li, k, bi, bj):
        """Remove a block's contribution from the cached residual."""
        cur = int(self.state.z[li][k][bi, bj])
        if cur == 0:
            return
        layer = self.spec.layers[li]
        u = bi * layer.pool_h + (cur - 1) // layer.pool_w
        v = bj * layer.pool_w + (cur - 1) % layer.pool_w
        F, r0, c0 = self.footprint(li, k, u, v)
        self.add_to_e(self.xs[li + 1][k][bi, bj], F, r0, c0)

    def attach_block(self, li, k, bi, bj, cat):
        self.state.z[li][k][bi, bj] = cat
        if cat == 0:
            return
        layer = self.spec.layers[li]
        u = bi * layer.pool_h + (cat - 1) // layer.pool_w
        v = bj * layer.pool_w + (cat - 1) % layer.pool_w
        F, r0, c0 = self.footprint(li, k, u, v)
        self.add_to_e(-self.xs[li + 1][k][bi, bj], F, r0, c0)

    def sample_unpool_indicator(self, li, k, bi, bj, rng):
        """Exact single-block resample (slow reference path)."""
        self.detach_block(li, k, bi, bj)
        p = self.unpool_indicator_probs(li, k, bi, bj)
        cdf = np.cumsum(p)
        u = rng.uniforms(()) * cdf[-1]
        cat = min(int(np.searchsorted(cdf, u, side="right")), p.size - 1)
        self.attach_block(li, k, bi, bj, cat)
        return cat

    def _scan_z_layer1(self, rng):
        """Fast path: layer-1 indicators, footprints are the kernels."""
        spec, state = self.spec, self.state
        layer = spec.layers[0]
        D = self.dicts.layers[0]
        K = layer.k
        ph, pw = layer.pool_h, layer.pool_w
        bh, bw = spec.blocks(0)
        V = np.stack([np.kron(self.xs[1][k], np.ones((ph, pw))) for k in range(K)])
        normmap = self._layer1_normmaps()
        uniforms = rng.uniforms((K, bh, bw))
        _kernels.scan_blocks_z(self.E, self.mask, D, normmap,
                               np.ascontiguousarray(V), state.z[0],
                               np.ascontiguousarray(state.theta[0]),
                               state.gamma_e, ph, pw, uniforms)

    def _layer1_normmaps(self):
        D = self.dicts.layers[0]
        K = D.shape[0]
        mh, mw = self.spec.map_h[0], self.spec.map_w[0]
        if self.mask is None:
            norms = np.sum(D * D, axis=(1, 2, 3))
            return np.ascontiguousarray(
                np.broadcast_to(norms[:, None, None], (K, mh, mw)).copy())
        out = np.empty((K, mh, mw))
        for k in range(K):
            acc = np.zeros((mh, mw))
            for c in range(D.shape[1]):
                acc += _kernels.correlate_valid(
                    np.ascontiguousarray(self.mask[c]),
                    np.ascontiguousarray(D[k, c] ** 2))
            out[k] = acc
        return np.ascontiguousarray(out)

    def _scan_z_deep(self, li, rng):
        """Exact sequential scan of a deep (l>=2, non-top) indicator layer."""
        spec = self.spec
        layer = spec.layers[li]
        bh, bw = spec.blocks(li)
        uniforms = rng.uniforms((layer.k, bh, bw))
        for k in range(layer.k):
            for bi in range(bh):
                for bj in range(bw):
                    self.detach_block(li, k, bi, bj)
                    p = self.unpool_indicator_probs(li, k, bi, bj)
                    cdf = np.cumsum(p)
                    u = uniforms[k, bi, bj] * cdf[-1]
                    cat = min(int(np.searchsorted(cdf, u, side="right")), p.size - 1)
                    self.attach_block(li, k, bi, bj, cat)

    # -- top layer -----------------------------------------------------------

    def _svm_arrays(self, svm):
        """Reshape the class weights onto the top grid; returns
        (beta_r, beta_dot, yvec, lam)."""
        spec = self.spec
        L = spec.n_layers - 1
        K, mh, mw = spec.layers[L].k, spec.map_h[L], spec.map_w[L]
        if svm is None or self.label is None:
            empty = np.zeros((0, K, mh, mw))
            z0 = np.zeros(0)
            return empty, z0, z0, np.ones(0)
        C = svm.classes
        beta_r = np.ascontiguousarray(svm.betas[:, :-1].reshape(C, K, mh, mw))
        feats = features_from_top(self.state.s_top)
        beta_dot = np.ascontiguousarray(svm.betas @ feats)
        yvec = np.full(C, -1.0)
        yvec[self.label - 1] = 1.0
        return beta_r, beta_dot, yvec, np.ascontiguousarray(self.state.lam)

    def scan_top(self, rng, svm=None):
        """Blocked (z, S) update of every top-layer element."""
        spec, state = self.spec, self.state
        L = spec.n_layers - 1
        layer = spec.layers[L]
        K, mh, mw = layer.k, spec.map_h[L], spec.map_w[L]
        uniforms = rng.uniforms((K, mh, mw))
        normals = rng.normals((K, mh, mw))
        beta_r, beta_dot, yvec, lam = self._svm_arrays(svm)
        gamma_svm = 1.0 if svm is None else svm.gamma
        theta = np.ascontiguousarray(state.theta[L])
        args = (state.z[L], state.s_top, state.s_top,
                np.ascontiguousarray(state.gamma_s), theta, state.gamma_e,
                beta_r, beta_dot, yvec, lam, gamma_svm, uniforms, normals, 0)
        if L == 0:
            _kernels.scan_top_l1(self.E, self.mask, self.dicts.layers[0], *args)
        elif L == 1:
            l0 = spec.layers[0]
            _kernels.scan_top_l2(self.E, self.mask, self.dicts.layers[0],
                                 self.dicts.layers[1], state.z[0],
                                 l0.pool_h, l0.pool_w, *args)
        else:
            self._scan_top_generic(uniforms, normals, beta_r, beta_dot, yvec,
                                   lam, gamma_svm, mode=0)

    def _scan_top_generic(self, uniforms, normals, beta_r, beta_dot, yvec,
                          lam, gamma_svm, mode, w_top=None):
        from ._kernels import numpy_impl
        spec, state = self.spec, self.state
        L = spec.n_layers - 1
        K, mh, mw = spec.layers[L].k, spec.map_h[L], spec.map_w[L]
        w_top = state.s_top if w_top is None else w_top
        for k in range(K):
            for i in range(mh):
                for j in range(mw):
                    F, r0, c0 = self.footprint(L, k, i, j)
                    numpy_impl._top_element_update(
                        self.E, self.mask, np.ascontiguousarray(F), r0, c0,
                        k, i, j, state.z[L], state.s_top, w_top,
                        state.gamma_s, state.theta[L], state.gamma_e,
                        beta_r, beta_dot, yvec, lam, gamma_svm,
                        uniforms, normals, mode)

    def sample_top_weight(self, k, i, j, rng, svm=None):
        """S^(L)[k,i,j] | z: exact zero when the switch is off, otherwise the
        Gaussian conditional (single-site reference path)."""
        state = self.state
        L = self.spec.n_layers - 1
        s_cur = state.s_top[k, i, j]
        if state.z[L][k, i, j] == 0:
            if s_cur != 0.0:
                F, r0, c0 = self.footprint(L, k, i, j)
                self.add_to_e(s_cur, F, r0, c0)
                state.s_top[k, i, j] = 0.0
            return 0.0
        mu, prec = self.top_weight_posterior(k, i, j, svm)
        s_new = mu + rng.normals(()) / np.sqrt(prec)
        F, r0, c0 = self.footprint(L, k, i, j)
        self.add_to_e(s_cur - s_new, F, r0, c0)
        state.s_top[k, i, j] = s_new
        return float(s_new)

    def top_weight_posterior(self, k, i, j, svm=None):
        """(mean, precision) of the active-branch Gaussian for one element."""
        state = self.state
        if state.lam is not None and np.any(state.lam <= 0):
            raise NumericsError("lambda scales must be positive")
        s_cur = state.s_top[k, i, j]
        F, r0, c0 = self.footprint(self.spec.n_layers - 1, k, i, j)
        self.add_to_e(s_cur, F, r0, c0)  # detach
        ge = state.gamma_e
        a = ge * self._norm2(F, r0, c0)
        b = ge * self._inner(F, r0, c0)
        beta_r, beta_dot, yvec, lam = self._svm_arrays(svm)
        for c in range(beta_r.shape[0]):
            bij = beta_r[c, k, i, j]
            rest = beta_dot[c] - bij * s_cur
            gl = (svm.gamma if svm is not None else 1.0) / lam[c]
            a += gl * bij * bij
            b += gl * yvec[c] * bij * (1.0 + lam[c] - yvec[c] * rest)
        self.add_to_e(-s_cur, F, r0, c0)  # re-attach
        prec = state.gamma_s[k] + a
        return b / prec, prec

    # -- scalar conditionals ---------------------------------------------------

    def sample_thetas(self, rng):
        for li, layer in enumerate(self.spec.layers):
            B = layer.block_len
            conc = layer.dirichlet_conc
            for k in range(layer.k):
                self.state.theta[li][k] = sample_theta(
                    self.state.z[li][k], B, conc, rng)

    def sample_gamma_s(self, rng):
        h = self.hypers
        L = self.spec.n_layers - 1
        area = self.spec.map_h[L] * self.spec.map_w[L]
        for k in range(self.spec.layers[L].k):
            rate = h.b_s + 0.5 * float(np.sum(self.state.s_top[k] ** 2))
            self.state.gamma_s[k] = sample_gamma(h.a_s + 0.5 * area, rate, rng)

    def sample_gamma_e(self, rng):
        h = self.hypers
        rate = h.b_e + 0.5 * self.masked_sq(self.E)
        self.state.gamma_e = sample_gamma(h.a_e + 0.5 * self.obs_count(), rate, rng)

    def sample_lambdas(self, svm, rng):
        feats = features_from_top(self.state.s_top)
        scores = svm.betas @ feats
        for c in range(svm.classes):
            y = 1.0 if self.label == c + 1 else -1.0
            self.state.lam[c] = sample_lambda(y * scores[c], rng)

    # -- one sweep -------------------------------------------------------------

    def sweep_latents(self, rng, svm=None):
        """One systematic scan over this image's latents: indicators bottom-up,
        Dirichlet weights, the top (z, S) pairs, precisions, SVM scales."""
        self.refresh()
        L = self.spec.n_layers - 1
        for li in range(L):
            if li == 0:
                self._scan_z_layer1(rng.substream(10, li))
            else:
                self._scan_z_deep(li, rng.substream(10, li))
        self.sample_thetas(rng.substream(11))
        self.scan_top(rng.substream(12), svm=svm)
        self.sample_gamma_s(rng.substream(13))
        self.sample_gamma_e(rng.substream(14))
        if svm is not None and self.label is not None:
            self.sample_lambdas(svm, rng.substream(15))


def sample_theta(z_grid, block_len, conc, rng):
    """Dirichlet conditional from indicator counts; index 0 is the off state."""
    counts = np.bincount(np.asarray(z_grid, dtype=np.int64).ravel(),
                         minlength=block_len + 1)
    return sample_dirichlet(conc + counts.astype(np.float64), rng)


def theta_alphas(z_grid, block_len, conc):
    counts = np.bincount(np.asarray(z_grid, dtype=np.int64).ravel(),
                         minlength=block_len + 1)
    return conc + counts.astype(np.float64)


# -- dictionary conditionals -------------------------------------------------

def _autocorr_crop(s, dh, dw):
    """Autocorrelation of a map at lags |a|<dh, |b|<dw."""
    full = signal.correlate2d(s, s, mode="full")
    ch, cw = s.shape[0] - 1, s.shape[1] - 1
    return full[ch - dh + 1:ch + dh, cw - dw + 1:cw + dw]


def sample_dicts_conv_plane(D, s_maps, e_maps, gamma_es, rng):
    """Gibbs scan over every pixel of a bank of kernels whose residual lives
    on the plane they convolve onto (deep layer 1, or any pretraining layer).

    D: (K, C, dh, dw) updated in place; s_maps: per image (K, Sh, Sw);
    e_maps: per image (C, H, W) residuals updated in place; gamma_es: (N,).

    Exact sequential sampling: the cross-pixel interaction within a kernel is
    handled through the aggregated autocorrelation of its weight maps, and
    residuals are re-synced after each kernel.
    """
    K, C, dh, dw = D.shape
    N = len(s_maps)
    for k in range(K):
        acorr = np.zeros((2 * dh - 1, 2 * dw - 1))
        G = np.zeros((C, dh, dw))
        for n in range(N):
            s = s_maps[n][k]
            ge = gamma_es[n]
            acorr += ge * _autocorr_crop(s, dh, dw)
            for c in range(C):
                G[c] += ge * _kernels.correlate_valid(
                    np.ascontiguousarray(e_maps[n][c]), np.ascontiguousarray(s))
        tau = 1.0 + acorr[dh - 1, dw - 1]
        normals = rng.normals((C, dh, dw))
        d_old = D[k].copy()
        for c in range(C):
            for p in range(dh):
                for q in range(dw):
                    mu = (G[c, p, q] + D[k, c, p, q] * (tau - 1.0)) / tau
                    d_new = mu + normals[c, p, q] / np.sqrt(tau)
                    delta = d_new - D[k, c, p, q]
                    if delta != 0.0:
                        D[k, c, p, q] = d_new
                        G[c] -= delta * acorr[p:p + dh, q:q + dw][::-1, ::-1]
        dd = D[k] - d_old
        if np.any(dd):
            for n in range(N):
                s = np.ascontiguousarray(s_maps[n][k])
                for c in range(C):
                    e_maps[n][c] -= _kernels.conv_full(s, np.ascontiguousarray(dd[c]))


def dictionary_pixel_posterior(samplers, li, k, c, p, q):
    """(mean, precision) of one dictionary pixel's conditional across a batch
    (generic path through the footprint machinery; any layer)."""
    D = samplers[0].dicts.layers[li]
    d_old = D[k, c, p, q]
    num, prec = 0.0, 1.0
    for sm in samplers:
        s_map = sm.ss[li][k]
        base = np.zeros((sm.spec.bands_below(li),) + s_map.shape)
        base[c] = s_map
        F, r0, c0 = sm._project_window(li, base, p, q)
        ge = sm.state.gamma_e
        prec += ge * sm._norm2(F, r0, c0)
        # <C, F> with C = E + d_old * F
        num += ge * (sm._inner(F, r0, c0) + d_old * sm._norm2(F, r0, c0))
    return num / prec, prec


def sample_dictionary_pixel(samplers, li, k, c, p, q, rng):
    """Draw one dictionary pixel from its exact conditional and propagate the
    change into every sampler's residual (reference path)."""
    mu, prec = dictionary_pixel_posterior(samplers, li, k, c, p, q)
    D = samplers[0].dicts.layers[li]
    d_new = mu + rng.normals(()) / np.sqrt(prec)
    delta = d_new - D[k, c, p, q]
    D[k, c, p, q] = d_new
    for sm in samplers:
        s_map = sm.ss[li][k]
        base = np.zeros((sm.spec.bands_below(li),) + s_map.shape)
        base[c] = s_map
        F, r0, c0 = sm._project_window(li, base, p, q)
        sm.add_to_e(-delta, F, r0, c0)
    return float(d_new)


def sample_dictionaries(samplers, rng):
    """Full-Gibbs dictionary pass, bottom layer first."""
    if not samplers:
        return
    spec = samplers[0].spec
    dicts = samplers[0].dicts
    for sm in samplers:
        if sm.mask is not None:
            raise NumericsError("dictionary sampling does not support masks")
    for li in range(spec.n_layers):
        for sm in samplers:
            sm.refresh()
        if li == 0:
            sample_dicts_conv_plane(
                dicts.layers[0], [sm.ss[0] for sm in samplers],
                [sm.E for sm in samplers],
                [sm.state.gamma_e for sm in samplers], rng.substream(20, li))
        else:
            D = dicts.layers[li]
            K, C, dh, dw = D.shape
            sub = rng.substream(20, li)
            for k in range(K):
                for c in range(C):
                    for p in range(dh):
                        for q in range(dw):
                            sample_dictionary_pixel(samplers, li, k, c, p, q, sub)


# -- SVM weight conditional (full-Gibbs mode) ---------------------------------

def sample_betas(svm, feats, labels, rng, floor=1e-6):
    """Coordinate-wise Gibbs pass over every class's weight vector.

    feats: (N, d) with bias appended; labels: (N,) in 1..C. The local scales
    use the folded shrinkage Omega = diag(max(|beta|, floor)).
    """
    N, d = feats.shape
    for c in range(svm.classes):
        y = np.where(labels == c + 1, 1.0, -1.0)
        lam = svm.lambdas[:, c]
        beta = svm.betas[c]
        omega = np.maximum(np.abs(beta), floor)
        dots = feats @ beta
        normals = rng.normals((d,))
        g = svm.gamma
        for i in range(d):
            si = feats[:, i]
            rest = dots - beta[i] * si
            prec = 1.0 / omega[i] + g * float(np.sum(si * si / lam))
            num = g * float(np.sum(y * si * (1.0 + lam - y * rest) / lam))
            b_new = num / prec + normals[i] / np.sqrt(prec)
            dots = rest + b_new * si
            beta[i] = b_new


def beta_coord_posterior(svm, feats, labels, c, i, floor=1e-6):
    """(mean, precision) of one weight coordinate's conditional (for tests)."""
    y = np.where(labels == c + 1, 1.0, -1.0)
    lam = svm.lambdas[:, c]
    beta = svm.betas[c]
    omega = np.maximum(np.abs(beta), floor)
    si = feats[:, i]
    rest = feats @ beta - beta[i] * si
    g = svm.gamma
    prec = 1.0 / omega[i] + g * float(np.sum(si * si / lam))
    num = g * float(np.sum(y * si * (1.0 + lam - y * rest) / lam))
    return num / prec, prec


# -- batch sweep ---------------------------------------------------------------

def gibbs_sweep(samplers, rng, svm=None, sample_globals=False):
    """One systematic scan: dictionaries (full-Gibbs mode only), per-image
    latents, then the SVM weights. Deterministic given the stream."""
    if sample_globals:
        sample_dictionaries(samplers, rng.substream(0))
    for n, sm in enumerate(samplers):
        sm.sweep_latents(rng.substream(1, n), svm=svm)
    if (sample_globals and svm is not None
            and any(sm.label is not None for sm in samplers)):
        feats = np.stack([features_from_top(sm.state.s_top) for sm in samplers])
        labels = np.array([sm.label for sm in samplers])
        svm.lambdas = np.stack([sm.state.lam for sm in samplers])
        sample_betas(svm, feats, labels, rng.substream(2))
