"""Bottom-up layerwise pretraining.

Each layer is fit on its own inputs with a local residual: the layer input is
represented as kernels convolved with S = Z (.) W, where W is a dense
Gaussian-magnitude map and Z the stochastic-unpooling indicators. Collected
dictionary samples are averaged; the pooled nonzero values (zero for off
blocks) become the next layer's inputs.
"""

import logging
from dataclasses import dataclass

import numpy as np

from . import model
from ._kernels import pool_adjoint, scan_active_w, scan_blocks_z, unpool_apply
from .distributions import sample_gamma
from .errors import ShapeError
from .gibbs import sample_dicts_conv_plane, sample_theta

log = logging.getLogger(__name__)


@dataclass
class PretrainProtocol:
    burnin: int = 1000
    collection: int = 500


@dataclass
class PretrainLayerState:
    """Per-image latents of one pretraining layer (S = Z (.) W holds by
    construction: S is never stored, only assembled)."""
    w: np.ndarray        # (K, Sh, Sw)
    z: np.ndarray        # (K, bh, bw) int32
    theta: np.ndarray    # (K, B+1)
    gamma_w: np.ndarray  # (K,)
    gamma_e: float

    def s_maps(self, ph, pw):
        K = self.w.shape[0]
        act = np.stack([unpool_apply(np.ones(self.z[k].shape, dtype=np.float64),
                                     self.z[k], ph, pw) for k in range(K)])
        return self.w * act


def pretrain_layer(inputs, layer, hypers, protocol, rng, masks=None):
    """Gibbs-learn one layer's kernels from its inputs.

    inputs: list of (bands, H, W) arrays. Returns
    (kernels, pooled_outputs, states, activation) where kernels is the
    average over collection sweeps, pooled_outputs feed the next layer, and
    activation[k] is the mean on-fraction of each kernel's indicators.
    """
    n = len(inputs)
    if n == 0:
        raise ShapeError("pretraining needs at least one image")
    bands, H, W = inputs[0].shape
    sh, sw = H - layer.dict_h + 1, W - layer.dict_w + 1
    if sh < 1 or sw < 1 or sh % layer.pool_h or sw % layer.pool_w:
        raise ShapeError(
            f"layer input {H}x{W} incompatible with kernel "
            f"{layer.dict_h}x{layer.dict_w} and pooling {layer.pool_h}x{layer.pool_w}")
    bh, bw = sh // layer.pool_h, sw // layer.pool_w
    K, B = layer.k, layer.block_len
    conc = layer.dirichlet_conc
    ph, pw = layer.pool_h, layer.pool_w

    D = 0.1 * rng.substream(0).normals((K, bands, layer.dict_h, layer.dict_w))
    states = []
    for i in range(n):
        states.append(PretrainLayerState(
            w=np.zeros((K, sh, sw)),
            z=np.zeros((K, bh, bw), dtype=np.int32),
            theta=np.full((K, B + 1), 1.0 / (B + 1)),
            gamma_w=np.ones(K),
            gamma_e=1.0))
    residuals = [np.ascontiguousarray(x, dtype=np.float64).copy() for x in inputs]

    d_sum = np.zeros_like(D)
    keep = 0
    act_sum = np.zeros(K)
    act_n = 0
    total = protocol.burnin + protocol.collection
    for sweep in range(1, total + 1):
        srng = rng.substream(1, sweep)
        s_all = [st.s_maps(ph, pw) for st in states]
        sample_dicts_conv_plane(D, s_all, residuals,
                                [st.gamma_e for st in states], srng.substream(0))
        for i, st in enumerate(states):
            irng = srng.substream(1, i)
            msk = None if masks is None else masks[i]
            # magnitudes: prior refresh everywhere, exact conditional where active
            prior_w = irng.normals((K, sh, sw)) / np.sqrt(st.gamma_w)[:, None, None]
            active = np.stack([unpool_apply(np.ones((bh, bw)), st.z[k], ph, pw)
                               for k in range(K)])
            st.w = np.ascontiguousarray(np.where(active > 0, st.w, prior_w))
            scan_active_w(residuals[i], msk, D, st.z, st.w, st.gamma_e,
                          np.ascontiguousarray(st.gamma_w), ph, pw,
                          irng.normals((K, bh, bw)))
            # indicators
            norms = np.sum(D * D, axis=(1, 2, 3))
            normmap = np.ascontiguousarray(
                np.broadcast_to(norms[:, None, None], (K, sh, sw)).copy())
            scan_blocks_z(residuals[i], msk, D, normmap, st.w, st.z,
                          np.ascontiguousarray(st.theta), st.gamma_e, ph, pw,
                          irng.uniforms((K, bh, bw)))
            for k in range(K):
                st.theta[k] = sample_theta(st.z[k], B, conc,
                                           irng.substream(2, k))
                rate = hypers.b_w + 0.5 * float(np.sum(st.w[k] ** 2))
                st.gamma_w[k] = sample_gamma(hypers.a_w + 0.5 * sh * sw, rate,
                                             irng.substream(3, k))
            rate = hypers.b_e + 0.5 * float(np.sum(residuals[i] ** 2))
            st.gamma_e = sample_gamma(hypers.a_e + 0.5 * residuals[i].size,
                                      rate, irng.substream(4))
        if sweep > protocol.burnin:
            d_sum += D
            keep += 1
            act_sum += np.array([np.mean([st.z[k] > 0 for st in states])
                                 for k in range(K)])
            act_n += 1

    d_avg = d_sum / max(keep, 1)
    activation = act_sum / max(act_n, 1)
    pooled = []
    for st in states:
        out = np.empty((K, bh, bw))
        for k in range(K):
            out[k] = pool_adjoint(np.ascontiguousarray(st.w[k]), st.z[k], ph, pw)
        pooled.append(out)
    return d_avg, pooled, states, activation


def stack_pretrain(images, spec, protocol, rng, prune_threshold=0.0):
    """Pretrain every layer bottom-up; returns (spec', dicts, latent_states).

    When prune_threshold > 0, kernels whose mean indicator activation falls
    below it are dropped and the architecture shrinks accordingly (the next
    layer then sees fewer bands, so pruning happens before it is fit).
    """
    inputs = [np.ascontiguousarray(x, dtype=np.float64) for x in images]
    kept_layers = []
    dict_arrays = []
    layer_states = []
    for li, layer in enumerate(spec.layers):
        d_avg, pooled, states, act = pretrain_layer(
            inputs, layer, spec.hypers, protocol, rng.substream(li))
        keep = np.arange(layer.k)
        if prune_threshold > 0.0:
            keep = np.flatnonzero(act >= prune_threshold)
            if keep.size == 0:
                keep = np.array([int(np.argmax(act))])
            if keep.size < layer.k:
                log.info("pretrain layer %d: pruning %d of %d elements",
                         li + 1, layer.k - keep.size, layer.k)
        kept_layers.append(model.LayerSpec(int(keep.size), layer.dict_h,
                                           layer.dict_w, layer.pool_h,
                                           layer.pool_w))
        dict_arrays.append(np.ascontiguousarray(d_avg[keep]))
        for st in states:
            st.w = st.w[keep]
            st.z = st.z[keep]
            st.theta = st.theta[keep]
            st.gamma_w = st.gamma_w[keep]
        layer_states.append(states)
        inputs = [np.ascontiguousarray(p[keep]) for p in pooled]

    new_spec = model.NetworkSpec(spec.input_h, spec.input_w, spec.input_bands,
                                 spec.classes, kept_layers, spec.hypers)
    dicts = model.DictionarySet(dict_arrays)
    dicts.check_shapes(new_spec)

    states = []
    L = new_spec.n_layers - 1
    top = layer_states[L]
    for i in range(len(images)):
        zs = [layer_states[li][i].z.copy() for li in range(L + 1)]
        thetas = [layer_states[li][i].theta.copy() for li in range(L + 1)]
        s_top = top[i].s_maps(new_spec.layers[L].pool_h, new_spec.layers[L].pool_w)
        states.append(model.LatentState(
            z=zs, theta=thetas, s_top=s_top,
            gamma_s=top[i].gamma_w.copy(), gamma_e=top[i].gamma_e,
            lam=np.ones(new_spec.classes) if new_spec.classes else None))
    return new_spec, dicts, states
