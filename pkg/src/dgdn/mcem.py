"""Stochastic Monte Carlo EM: training (E-step Gibbs sampling of the local
variables, RMSprop M-step on the dictionaries, closed-form class-weight
solve) and test-time MAP inference of the top-layer features.

Also hosts the full-Gibbs training mode for small datasets (burn-in /
collection / thinning with model averaging over the collected globals).
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model, svm as svm_mod, tensor
from ._kernels import (conv_full, correlate_valid, pool_adjoint,
                       scan_top_l1, scan_top_l2)
from .distributions import RngStream, sample_gamma
from .errors import NumericsError
from .gibbs import ImageSampler, features_from_top, gibbs_sweep, sample_theta
from .svm import update_beta

log = logging.getLogger(__name__)

RMS_EPS = 1e-8


@dataclass
class RmspropState:
    """Per-parameter squared-gradient accumulators (one array per kernel bank)."""
    v: list
    decay: float = 0.95
    step_size: float = 1e-3

    @classmethod
    def for_dicts(cls, dicts, decay, step_size):
        return cls([np.zeros_like(d) for d in dicts.layers], decay, step_size)

    def copy(self):
        return RmspropState([a.copy() for a in self.v], self.decay, self.step_size)


def rmsprop_step(param, grad, state, index=0):
    """v <- a*v + (1-a)*g^2;  param <- param + eps * g / (sqrt(v) + 1e-8)."""
    v = state.v[index]
    v *= state.decay
    v += (1.0 - state.decay) * grad * grad
    param += state.step_size * grad / (np.sqrt(v) + RMS_EPS)
    return param


@dataclass
class TrainConfig:
    minibatch: int = 256
    ns: int = 1
    iters: int = 100
    seed: int = 0
    mode: str = "mcem"            # "mcem" | "gibbs"
    estep_sweeps: int = 1
    burnin: int = 1000
    collection: int = 500
    thin: int = 50
    checkpoint_every: int = 0     # 0 = final only
    test_iters: int = 30
    test_theta: float = 0.5
    threads: int = 1
    # pretraining protocol (paper defaults; desk-scale configs shrink these)
    pretrain_burnin: int = 1000
    pretrain_collection: int = 500
    pretrain_images: int = 0      # 0 = all
    prune_threshold: float = 0.0  # 0 = keep all elements

    def validate(self):
        if self.minibatch < 1 or self.ns < 1 or self.iters < 0:
            raise NumericsError("minibatch, ns and iters must be positive")
        if self.mode not in ("mcem", "gibbs"):
            raise NumericsError(f"unknown training mode {self.mode!r}")


# ---------------------------------------------------------------------------
# E step

def estep(samplers, config, rng, svm=None):
    """Draw ns posterior samples of the local variables per image, with the
    globals frozen. Returns per-image lists of snapshot dicts."""
    out = [[] for _ in samplers]

    def run_image(n):
        sm = samplers[n]
        for s in range(config.ns):
            sub = rng.substream(n, s)
            for sweep in range(config.estep_sweeps):
                sm.sweep_latents(sub.substream(sweep), svm=svm)
            out[n].append({
                "s_top": sm.state.s_top.copy(),
                "z": [z.copy() for z in sm.state.z],
                "gamma_e": sm.state.gamma_e,
                "gamma_s": sm.state.gamma_s.copy(),
                "lam": None if sm.state.lam is None else sm.state.lam.copy(),
            })

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            list(pool.map(run_image, range(len(samplers))))
    else:
        for n in range(len(samplers)):
            run_image(n)
    return out


# ---------------------------------------------------------------------------
# Objective and gradients

def qbar(images, samples, dicts, spec, hypers, svm=None, labels=None):
    """Monte Carlo objective: minus the expected residual and margin energies,
    minus the dictionary prior penalty (additive constants dropped)."""
    ns = len(samples[0])
    total = 0.0
    for n, image in enumerate(images):
        for snap in samples[n]:
            xs, _ = model.decode_chain(snap["s_top"], snap["z"], dicts, spec)
            e = image - xs[0]
            total += 0.5 * snap["gamma_e"] * float(np.sum(e * e))
            if svm is not None and labels is not None:
                feats = features_from_top(snap["s_top"])
                scores = svm.betas @ feats
                for c in range(svm.classes):
                    y = 1.0 if labels[n] == c + 1 else -1.0
                    lam = snap["lam"][c]
                    r = 1.0 + lam - y * scores[c]
                    total += svm.gamma * r * r / (2.0 * lam)
    total /= ns
    penalty = 0.5 * sum(float(np.sum(d * d)) for d in dicts.layers)
    return -(total + penalty)


def backprop_delta(image, snap, dicts, spec, mask=None):
    """Error planes for one sample: delta[0] = gamma_e * Ebar at the data
    plane, then correlate-with-kernels and gather-through-indicators upward.

    Returns (deltas, ss, e) with ss the decoded feature maps of the sample.
    """
    xs, ss = model.decode_chain(snap["s_top"], snap["z"], dicts, spec)
    e = image - xs[0]
    if mask is not None:
        e = e * mask
    deltas = [snap["gamma_e"] * e]
    for p in range(1, spec.n_layers):
        D = dicts.layers[p - 1]
        K, C = D.shape[0], D.shape[1]
        layer = spec.layers[p - 1]
        prev = deltas[p - 1]
        cur = np.empty((K, spec.in_h[p], spec.in_w[p]))
        for k in range(K):
            acc = np.zeros((spec.map_h[p - 1], spec.map_w[p - 1]))
            for m in range(C):
                acc += correlate_valid(np.ascontiguousarray(prev[m]),
                                       np.ascontiguousarray(D[k, m]))
            cur[k] = pool_adjoint(acc, snap["z"][p - 1][k],
                                  layer.pool_h, layer.pool_w)
        deltas.append(cur)
    return deltas, ss, e


def grad_dictionary(images, samples, dicts, spec, mask=None):
    """Ascent gradient of qbar wrt every kernel: the correlation of each error
    plane with the sample feature maps, averaged over samples and summed over
    the batch, minus the prior pull -D."""
    ns = len(samples[0])
    grads = [np.zeros_like(d) for d in dicts.layers]
    for n, image in enumerate(images):
        for snap in samples[n]:
            deltas, ss, _ = backprop_delta(image, snap, dicts, spec, mask=mask)
            for p in range(spec.n_layers):
                D = dicts.layers[p]
                K, C = D.shape[0], D.shape[1]
                for k in range(K):
                    sk = np.ascontiguousarray(ss[p][k])
                    if not np.any(sk):
                        continue
                    for m in range(C):
                        grads[p][k, m] += correlate_valid(
                            np.ascontiguousarray(deltas[p][m]), sk) / ns
    for p in range(spec.n_layers):
        grads[p] -= dicts.layers[p]
    return grads


# ---------------------------------------------------------------------------
# Training

def _hinge_total(feats, labels, svm):
    total = 0.0
    for c in range(svm.classes):
        y = np.where(labels == c + 1, 1.0, -1.0)
        total += float(np.maximum(1.0 - y * (feats @ svm.betas[c]), 0.0).sum())
    return total


def train(images, labels, spec, config, dicts=None, svm=None, states=None,
          metrics=None, checkpoint_cb=None):
    """Stochastic MCEM (Algorithm-1 loop) or full-Gibbs training.

    images: list of (C,H,W) arrays; labels: list in 1..C or None.
    Returns (checkpoints, metric_rows); each metric row is
    (iteration, qbar, hinge, seconds).
    """
    from .io import Checkpoint
    config.validate()
    hypers = spec.hypers
    rng = RngStream(config.seed)
    supervised = labels is not None and spec.classes >= 2
    if dicts is None:
        dicts = model.DictionarySet.from_prior(spec, rng.substream(0), scale=0.1)
    if supervised and svm is None:
        svm = svm_mod.SvmState(spec.classes, spec.svm_dim, len(images))
        svm.gamma = hypers.svm_gamma
    if states is None:
        states = [model.init_latent(spec, supervised=supervised)
                  for _ in images]

    if config.mode == "gibbs":
        return _train_gibbs(images, labels, spec, config, dicts, svm, states,
                            metrics, rng)

    rms = RmspropState.for_dicts(dicts, hypers.rmsprop_decay, hypers.learning_rate)
    rows = []
    checkpoints = []
    t0 = time.perf_counter()
    n_total = len(images)
    for it in range(1, config.iters + 1):
        bstream = rng.substream(1, it)
        size = min(config.minibatch, n_total)
        idx = bstream.gen.permutation(n_total)[:size]
        samplers = []
        for n in idx:
            samplers.append(ImageSampler(
                images[n], spec, dicts, hypers, state=states[n],
                label=labels[n] if supervised else None))
        samples = estep(samplers, config, rng.substream(2, it), svm=svm)

        batch_imgs = [images[n] for n in idx]
        batch_labels = np.array([labels[n] for n in idx]) if supervised else None
        q = qbar(batch_imgs, samples, dicts, spec, hypers, svm=svm,
                 labels=batch_labels)
        if not np.isfinite(q):
            raise NumericsError(f"qbar diverged at iteration {it}: {q}")

        grads = grad_dictionary(batch_imgs, samples, dicts, spec)
        for p in range(spec.n_layers):
            rmsprop_step(dicts.layers[p], grads[p], rms, index=p)

        hinge = 0.0
        if supervised:
            feats = np.stack([
                np.mean([features_from_top(s["s_top"]) for s in samples[n]], axis=0)
                for n in range(len(idx))])
            lam_bar = np.stack([
                np.mean([s["lam"] for s in samples[n]], axis=0)
                for n in range(len(idx))])
            for c in range(svm.classes):
                y = np.where(batch_labels == c + 1, 1.0, -1.0)
                svm.betas[c] = update_beta(feats, y, lam_bar[:, c],
                                           svm.betas[c], svm.gamma)
            hinge = _hinge_total(feats, batch_labels, svm)

        seconds = time.perf_counter() - t0
        rows.append((it, q, hinge, seconds))
        if metrics is not None:
            metrics(it, q, hinge, seconds)
        if config.checkpoint_every and it % config.checkpoint_every == 0:
            checkpoints.append(Checkpoint(
                spec=spec, dicts=dicts.copy(),
                betas=None if svm is None else svm.betas.copy(),
                rms_v=[v.copy() for v in rms.v], seed=config.seed, iteration=it))
        if checkpoint_cb is not None:
            checkpoint_cb(it, dicts, svm)

    checkpoints.append(Checkpoint(
        spec=spec, dicts=dicts.copy(),
        betas=None if svm is None else svm.betas.copy(),
        rms_v=[v.copy() for v in rms.v], seed=config.seed,
        iteration=config.iters))
    return checkpoints, rows


def _train_gibbs(images, labels, spec, config, dicts, svm, states, metrics, rng):
    """Full Gibbs for small data: burn-in, then thinned collection of the
    global parameters for model averaging."""
    from .io import Checkpoint
    supervised = labels is not None and spec.classes >= 2
    samplers = [ImageSampler(images[n], spec, dicts, spec.hypers,
                             state=states[n],
                             label=labels[n] if supervised else None)
                for n in range(len(images))]
    rows = []
    checkpoints = []
    t0 = time.perf_counter()
    total = config.burnin + config.collection
    for it in range(1, total + 1):
        gibbs_sweep(samplers, rng.substream(3, it), svm=svm, sample_globals=True)
        if it > config.burnin and (it - config.burnin) % config.thin == 0:
            checkpoints.append(Checkpoint(
                spec=spec, dicts=dicts.copy(),
                betas=None if svm is None else svm.betas.copy(),
                rms_v=None, seed=config.seed, iteration=it))
        if metrics is not None and (it % 10 == 0 or it == total):
            e2 = float(np.mean([np.sum(sm.E ** 2) for sm in samplers]))
            metrics(it, -e2, 0.0, time.perf_counter() - t0)
            rows.append((it, -e2, 0.0, time.perf_counter() - t0))
    if not checkpoints:
        checkpoints.append(Checkpoint(
            spec=spec, dicts=dicts.copy(),
            betas=None if svm is None else svm.betas.copy(),
            rms_v=None, seed=config.seed, iteration=total))
    return checkpoints, rows


# ---------------------------------------------------------------------------
# Test-time inference (Algorithm-2 loop)

def _init_test_state(image, spec, dicts, mask, config):
    """Warm start for MAP feature inference: indicators centered, W from a
    scaled gradient backprojection so aligned elements survive the first
    on/off threshold."""
    state = model.init_latent(spec)
    L = spec.n_layers - 1
    for li in range(L):
        layer = spec.layers[li]
        state.z[li][:] = model.center_category(layer.pool_h, layer.pool_w)
    state.z[L][:] = 1
    th = min(max(config.test_theta, 0.0), 1.0)
    state.theta[L][:, 0] = 1.0 - th
    state.theta[L][:, 1] = th
    snap = {"s_top": state.s_top, "z": state.z, "gamma_e": 1.0}
    deltas, _, _ = backprop_delta(image, snap, dicts, spec, mask=mask)
    D = dicts.layers[L]
    K, C = D.shape[0], D.shape[1]
    g = np.empty_like(state.s_top)
    for k in range(K):
        acc = np.zeros((spec.map_h[L], spec.map_w[L]))
        for m in range(C):
            acc += correlate_valid(np.ascontiguousarray(deltas[L][m]),
                                   np.ascontiguousarray(D[k, m]))
        g[k] = acc
    peak = float(np.abs(g).max())
    w = g * (0.5 / peak) if peak > 0 else g
    return state, w


def _threshold_top(sampler, w_top, config):
    """Test-time M-step hard on/off update (theta*eta > 1-theta), run as a
    sequential scan so each decision sees the current residual."""
    spec, state = sampler.spec, sampler.state
    L = spec.n_layers - 1
    K, mh, mw = spec.layers[L].k, spec.map_h[L], spec.map_w[L]
    empty_u = np.zeros((K, mh, mw))
    zero_cls = np.zeros((0, K, mh, mw))
    z0 = np.zeros(0)
    args = (state.z[L], state.s_top, np.ascontiguousarray(w_top),
            np.ascontiguousarray(state.gamma_s),
            np.ascontiguousarray(state.theta[L]), state.gamma_e,
            zero_cls, z0, z0, np.ones(0), 1.0, empty_u, empty_u, 1)
    if L == 0:
        scan_top_l1(sampler.E, sampler.mask, sampler.dicts.layers[0], *args)
    elif L == 1:
        l0 = spec.layers[0]
        scan_top_l2(sampler.E, sampler.mask, sampler.dicts.layers[0],
                    sampler.dicts.layers[1], state.z[0], l0.pool_h, l0.pool_w,
                    *args)
    else:
        sampler._scan_top_generic(empty_u, empty_u, zero_cls, z0, z0,
                                  np.ones(0), 1.0, mode=1, w_top=w_top)


def infer_features(image, dicts, spec, config, rng, mask=None,
                   return_state=False):
    """MAP estimate of the top-layer feature maps for one image.

    E-step: Gibbs samples of the lower indicators and precisions given the
    current (W, Z). M-step: RMSprop ascent on W and the hard threshold on Z.
    Early stop when the objective's relative change drops below 1e-5; on
    non-convergence the best-visited state is returned with a warning.
    """
    image = tensor.as_tensor3(image, "image")
    hypers = spec.hypers
    L = spec.n_layers - 1
    state, w = _init_test_state(image, spec, dicts, mask, config)
    state.s_top = w * (state.z[L] > 0)
    sampler = ImageSampler(image, spec, dicts, hypers, state=state, mask=mask)
    u_acc = RmspropState([np.zeros_like(w)], hypers.rmsprop_decay,
                         hypers.learning_rate)
    area = spec.map_h[L] * spec.map_w[L]
    best = (-np.inf, None, None)
    prev_q = None
    converged = False
    history = []
    for t in range(1, config.test_iters + 1):
        sub = rng.substream(t)
        sampler.refresh()
        # E step
        gs_samples = np.zeros_like(state.gamma_s)
        ge_sample = 0.0
        deltas_sum = None
        for s in range(config.ns):
            ssub = sub.substream(s)
            for li in range(L):
                if li == 0:
                    sampler._scan_z_layer1(ssub.substream(0, li))
                else:
                    sampler._scan_z_deep(li, ssub.substream(0, li))
                layer = spec.layers[li]
                for k in range(layer.k):
                    state.theta[li][k] = sample_theta(
                        state.z[li][k], layer.block_len, layer.dirichlet_conc,
                        ssub.substream(1, li, k))
            for k in range(spec.layers[L].k):
                rate = hypers.b_s + 0.5 * float(np.sum(w[k] ** 2))
                state.gamma_s[k] = sample_gamma(hypers.a_s + 0.5 * area, rate,
                                                ssub.substream(2, k))
            rate = hypers.b_e + 0.5 * sampler.masked_sq(sampler.E)
            state.gamma_e = sample_gamma(hypers.a_e + 0.5 * sampler.obs_count(),
                                         rate, ssub.substream(3))
            gs_samples += state.gamma_s / config.ns
            ge_sample += state.gamma_e / config.ns
            snap = {"s_top": state.s_top, "z": state.z, "gamma_e": state.gamma_e}
            deltas, _, _ = backprop_delta(image, snap, dicts, spec, mask=mask)
            if deltas_sum is None:
                deltas_sum = deltas[L] / config.ns
            else:
                deltas_sum += deltas[L] / config.ns

        q = -(0.5 * ge_sample * sampler.masked_sq(sampler.E)
              + 0.5 * float(np.sum(gs_samples[:, None, None] * w * w)))
        history.append(q)
        if q > best[0]:
            best = (q, w.copy(), [z.copy() for z in state.z])

        # M step: hard threshold on Z, then RMSprop on W
        _threshold_top(sampler, w, config)
        D = dicts.layers[L]
        K, C = D.shape[0], D.shape[1]
        grad = np.empty_like(w)
        for k in range(K):
            acc = np.zeros((spec.map_h[L], spec.map_w[L]))
            for m in range(C):
                acc += correlate_valid(np.ascontiguousarray(deltas_sum[m]),
                                       np.ascontiguousarray(D[k, m]))
            grad[k] = acc * (state.z[L][k] > 0) - gs_samples[k] * w[k]
        rmsprop_step(w, grad, u_acc, index=0)
        state.s_top = w * (state.z[L] > 0)

        if prev_q is not None and abs(q - prev_q) <= 1e-5 * max(abs(prev_q), 1e-12):
            converged = True
            break
        prev_q = q

    if not converged and config.test_iters > 1:
        log.warning("feature inference did not converge in %d iterations; "
                    "returning best-visited state", config.test_iters)
        if best[1] is not None:
            w = best[1]
            state.z = best[2]
            state.s_top = w * (state.z[L] > 0)

    feats = features_from_top(state.s_top)
    if return_state:
        sampler.refresh()
        return feats, state, history
    return feats


def classify(image, checkpoint, config, rng):
    """Infer top features, then one-vs-all argmax. Returns (label, scores)."""
    if checkpoint.betas is None:
        raise NumericsError("checkpoint has no classifier weights")
    feats = infer_features(image, checkpoint.dicts, checkpoint.spec, config, rng)
    return svm_mod.predict(feats, checkpoint.betas)


def model_average(checkpoints, image, config, rng=None):
    """Average the per-class decision values across checkpoints, then argmax.

    Every checkpoint's inference restarts the identical stream, so a
    duplicated checkpoint list reproduces single-checkpoint classification
    exactly.
    """
    if not checkpoints:
        raise NumericsError("model_average needs at least one checkpoint")
    if rng is None:
        rng = RngStream(config.seed, ("avg",))
    total = None
    for cp in checkpoints:
        if cp.betas is None:
            raise NumericsError("checkpoint has no classifier weights")
        feats = infer_features(image, cp.dicts, cp.spec, config,
                               RngStream(rng.seed, rng.key))
        scores = svm_mod.decision_values(feats, cp.betas)
        total = scores if total is None else total + scores
    total /= len(checkpoints)
    return int(np.argmax(total)) + 1, total
