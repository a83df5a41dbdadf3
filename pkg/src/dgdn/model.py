"""Architecture description, parameter containers, and the top-down
generative pass.

Layer numbering is 1-based bottom-to-top in docs and 0-based in lists. The
shape chain per layer l: the input plane X^l has ``in_h = map_h + dict_h - 1``
rows (full convolution), and the feature maps S^l pool down to the next input
plane, ``map_h = pool_h * in_h(l+1)``. The top layer has no pooling above it
(pool 1x1); its indicators are elementwise on/off switches, the off state
being the extra category that zeroes a block.
"""

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .distributions import sample_dirichlet, sample_gamma
from .errors import ConfigError, ShapeError


@dataclass
class LayerSpec:
    k: int
    dict_h: int
    dict_w: int
    pool_h: int = 1
    pool_w: int = 1

    @property
    def block_len(self):
        return self.pool_h * self.pool_w

    @property
    def dirichlet_conc(self):
        return 1.0 / (self.block_len + 1)


@dataclass
class Hyperparams:
    """Prior and optimizer constants. a_0/b_0 are the spike-slab Beta
    parameters retained for completeness; sampling runs top-layer sparsity
    through the off-state Dirichlet machinery instead."""
    a_s: float = 1e-6
    b_s: float = 1e-6
    a_e: float = 1e-6
    b_e: float = 1e-6
    a_w: float = 1e-6
    b_w: float = 1e-6
    a_0: float = 0.0   # 0 = auto: 1/K_top
    b_0: float = 0.0   # 0 = auto: 1 - 1/K_top
    svm_gamma: float = 1.0
    rmsprop_decay: float = 0.95
    learning_rate: float = 1e-3
    ns: int = 1
    minibatch: int = 256

    def validate(self):
        for name in ("a_s", "b_s", "a_e", "b_e", "a_w", "b_w", "svm_gamma",
                     "rmsprop_decay", "learning_rate"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"hyperparameter {name} must be positive")
        if self.ns < 1 or self.minibatch < 1:
            raise ConfigError("ns and minibatch must be >= 1")


@dataclass
class NetworkSpec:
    input_h: int
    input_w: int
    input_bands: int
    classes: int
    layers: list
    hypers: Hyperparams = field(default_factory=Hyperparams)

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if self.classes < 0 or self.classes == 1:
            raise ConfigError("class count must be 0 (unsupervised) or >= 2")
        ls = self.layers[-1]
        if ls.pool_h != 1 or ls.pool_w != 1:
            raise ConfigError("top layer must have pooling ratio 1x1")
        self.in_h = [self.input_h]
        self.in_w = [self.input_w]
        self.map_h = []
        self.map_w = []
        for i, layer in enumerate(self.layers):
            mh = self.in_h[i] - layer.dict_h + 1
            mw = self.in_w[i] - layer.dict_w + 1
            if mh < 1 or mw < 1:
                raise ConfigError(
                    f"layer {i + 1}: kernel {layer.dict_h}x{layer.dict_w} larger "
                    f"than its input plane {self.in_h[i]}x{self.in_w[i]}")
            if mh % layer.pool_h or mw % layer.pool_w:
                raise ConfigError(
                    f"layer {i + 1}: feature maps {mh}x{mw} not divisible by "
                    f"pooling {layer.pool_h}x{layer.pool_w}")
            self.map_h.append(mh)
            self.map_w.append(mw)
            self.in_h.append(mh // layer.pool_h)
            self.in_w.append(mw // layer.pool_w)
        if self.hypers.a_0 == 0.0:
            self.hypers.a_0 = 1.0 / self.layers[-1].k
        if self.hypers.b_0 == 0.0:
            self.hypers.b_0 = 1.0 - 1.0 / self.layers[-1].k

    @property
    def n_layers(self):
        return len(self.layers)

    def bands_below(self, li):
        """Band count of the layer-li input plane (li is 0-based)."""
        return self.input_bands if li == 0 else self.layers[li - 1].k

    def blocks(self, li):
        """Block-grid dims of layer li's feature maps."""
        layer = self.layers[li]
        return self.map_h[li] // layer.pool_h, self.map_w[li] // layer.pool_w

    @property
    def top_feature_dim(self):
        L = self.n_layers - 1
        return self.layers[L].k * self.map_h[L] * self.map_w[L]

    @property
    def svm_dim(self):
        return self.top_feature_dim + 1  # appended bias


@dataclass
class DictionarySet:
    """Per layer: array (K_l, K_{l-1}, dict_h, dict_w) of kernels."""
    layers: list

    @classmethod
    def from_prior(cls, spec, rng, scale=0.1):
        """Initialize from the standard-normal prior, scaled down."""
        out = []
        for li, layer in enumerate(spec.layers):
            shape = (layer.k, spec.bands_below(li), layer.dict_h, layer.dict_w)
            out.append(scale * rng.gen.standard_normal(shape))
        return cls(out)

    def copy(self):
        return DictionarySet([d.copy() for d in self.layers])

    def check_shapes(self, spec):
        for li, layer in enumerate(spec.layers):
            want = (layer.k, spec.bands_below(li), layer.dict_h, layer.dict_w)
            if self.layers[li].shape != want:
                raise ShapeError(f"layer {li + 1} kernels {self.layers[li].shape}, want {want}")


@dataclass
class LatentState:
    """Per-image latent variables. Lower-layer feature maps are derived
    (S^l = unpool(X^{l+1}, Z^l)), so only the top maps are stored."""
    z: list                 # per layer int32; top layer holds 0/1
    theta: list             # per layer (K_l, block_len+1); [.,0] = off
    s_top: np.ndarray       # (K_L, mh, mw)
    gamma_s: np.ndarray     # (K_L,)
    gamma_e: float
    lam: np.ndarray = None  # (C,) SVM latent scales when supervised

    def copy(self):
        return LatentState([z.copy() for z in self.z],
                           [t.copy() for t in self.theta],
                           self.s_top.copy(), self.gamma_s.copy(),
                           self.gamma_e,
                           None if self.lam is None else self.lam.copy())


def init_latent(spec, supervised=False):
    """Cold start: everything off/zero, Dirichlet weights at their prior mean."""
    zs, thetas = [], []
    for li, layer in enumerate(spec.layers):
        if li == spec.n_layers - 1:
            zs.append(np.zeros((layer.k, spec.map_h[li], spec.map_w[li]), dtype=np.int32))
        else:
            bh, bw = spec.blocks(li)
            zs.append(np.zeros((layer.k, bh, bw), dtype=np.int32))
        thetas.append(np.full((layer.k, layer.block_len + 1),
                              1.0 / (layer.block_len + 1)))
    L = spec.n_layers - 1
    state = LatentState(
        z=zs, theta=thetas,
        s_top=np.zeros((spec.layers[L].k, spec.map_h[L], spec.map_w[L])),
        gamma_s=np.ones(spec.layers[L].k),
        gamma_e=1.0,
        lam=np.ones(spec.classes) if supervised else None)
    return state


def sample_prior_state(spec, hypers, rng, supervised=False):
    """Draw all per-image latents from their priors (the generative story)."""
    L = spec.n_layers - 1
    zs, thetas = [], []
    for li, layer in enumerate(spec.layers):
        B = layer.block_len
        conc = layer.dirichlet_conc
        th = np.empty((layer.k, B + 1))
        if li == L:
            grid = np.empty((layer.k, spec.map_h[li], spec.map_w[li]), dtype=np.int32)
        else:
            bh, bw = spec.blocks(li)
            grid = np.empty((layer.k, bh, bw), dtype=np.int32)
        for k in range(layer.k):
            th[k] = sample_dirichlet(np.full(B + 1, conc), rng)
            cdf = np.cumsum(th[k])
            u = rng.uniforms(grid.shape[1:]) * cdf[-1]
            grid[k] = np.minimum(np.searchsorted(cdf, u.ravel(), side="right"),
                                 B).reshape(grid.shape[1:]).astype(np.int32)
        zs.append(grid)
        thetas.append(th)
    gamma_s = np.array([sample_gamma(hypers.a_s, hypers.b_s, rng)
                        for _ in range(spec.layers[L].k)])
    gamma_e = sample_gamma(hypers.a_e, hypers.b_e, rng)
    mh, mw = spec.map_h[L], spec.map_w[L]
    w = rng.normals((spec.layers[L].k, mh, mw)) / np.sqrt(gamma_s)[:, None, None]
    s_top = w * (zs[L] > 0)
    return LatentState(zs, thetas, s_top, gamma_s, gamma_e,
                       lam=np.ones(spec.classes) if supervised else None)


def decode_chain(s_top, zs, dicts, spec):
    """Run the top-down pass; returns (xs, ss) where xs[li] is the layer-li
    input plane reconstruction and ss[li] the layer-li feature maps."""
    L = spec.n_layers - 1
    ss = [None] * (L + 1)
    xs = [None] * (L + 1)
    s = np.asarray(s_top, dtype=np.float64)
    for li in range(L, -1, -1):
        ss[li] = s
        D = dicts.layers[li]
        K, C = D.shape[0], D.shape[1]
        x = np.zeros((C, spec.in_h[li], spec.in_w[li]))
        for k in range(K):
            if not np.any(s[k]):
                continue
            for c in range(C):
                x[c] += tensor.conv_full(s[k], D[k, c])
        xs[li] = x
        if li > 0:
            layer = spec.layers[li - 1]
            s = np.stack([
                tensor.unpool_apply(x[k], zs[li - 1][k], layer.pool_h, layer.pool_w)
                for k in range(C)])
    return xs, ss


def generative_decode(s_top, zs, dicts, spec):
    """Mean image from top weights and unpool indicators (deterministic)."""
    xs, _ = decode_chain(s_top, zs, dicts, spec)
    return xs[0]


def residual(image, state, dicts, spec):
    """E = image - generative_decode(state)."""
    image = tensor.as_tensor3(image, "image")
    want = (spec.input_bands, spec.input_h, spec.input_w)
    if image.shape != want:
        raise ShapeError(f"image shape {image.shape}, spec wants {want}")
    return image - generative_decode(state.s_top, state.z, dicts, spec)


def sample_prior_image(spec, dicts, rng, hypers=None, supervised=False):
    """Generate (image, latent state) from the full prior; the state plus its
    noise draw reproduces the image exactly through generative_decode."""
    hypers = hypers or spec.hypers
    state = sample_prior_state(spec, hypers, rng, supervised=supervised)
    mean = generative_decode(state.s_top, state.z, dicts, spec)
    noise = rng.normals(mean.shape) / np.sqrt(state.gamma_e)
    return mean + noise, state


def g_response(x, k, layer, state, dicts, spec):
    """Data-plane response of perturbing band k of the layer-`layer` input
    plane by the single-band map x (layer is 1-based and must be >= 2).

    Linear in x; summing over bands and adding E recovers the image.
    """
    if layer < 2 or layer > spec.n_layers:
        raise ShapeError(f"g_response needs 2 <= layer <= {spec.n_layers}, got {layer}")
    x = tensor.as_map(x, "x")
    li = layer - 1  # 0-based: x perturbs xs[li], band k
    lower = spec.layers[li - 1]
    s = tensor.unpool_apply(x, state.z[li - 1][k], lower.pool_h, lower.pool_w)
    D = dicts.layers[li - 1]  # (K_{li-1}, bands, dh, dw); kernel index k
    if layer == 2:
        return tensor.conv_full(s, D[k])
    out = None
    for m in range(D.shape[1]):
        contrib = g_response(tensor.conv_full(s, D[k, m]), m, layer - 1,
                             state, dicts, spec)
        out = contrib if out is None else out + contrib
    return out


def center_category(ph, pw):
    """Indicator category selecting the center position of a ph x pw block."""
    return ((ph - 1) // 2) * pw + (pw - 1) // 2 + 1


def visualize_dictionary(dicts, spec, layer, element):
    """Project one dictionary element down to the data plane through centered
    deterministic unpooling; layer is 1-based."""
    if not (1 <= layer <= spec.n_layers):
        raise ShapeError(f"layer must be in 1..{spec.n_layers}")
    if not (0 <= element < spec.layers[layer - 1].k):
        raise ShapeError(f"element must be in 0..{spec.layers[layer - 1].k - 1}")
    maps = dicts.layers[layer - 1][element].copy()  # (bands_below, dh, dw)
    for li in range(layer - 2, -1, -1):
        lr = spec.layers[li]
        cat = center_category(lr.pool_h, lr.pool_w)
        K, C = dicts.layers[li].shape[0], dicts.layers[li].shape[1]
        out = None
        for k in range(K):
            z = np.full(maps[k].shape, cat, dtype=np.int32)
            s = tensor.unpool_apply(maps[k], z, lr.pool_h, lr.pool_w)
            for c in range(C):
                contrib = tensor.conv_full(s, dicts.layers[li][k, c])
                if out is None:
                    out = np.zeros((C,) + contrib.shape)
                out[c] += contrib
        maps = out
    return maps
