"""Random streams and the samplers the Gibbs/MCEM machinery needs.

Streams are counter-keyed: a stream is identified by (seed, key tuple), and
equal identifiers reproduce the exact draw sequence. Derived streams
(``substream``) are statistically independent, which lets per-image sampling
run in parallel with deterministic results regardless of scheduling.
"""

import numpy as np

from .errors import NumericsError

# Cap on the inverse-Gaussian mean when the SVM margin |1 - y*f| underflows;
# the exact-margin singularity is never addressed by the model itself.
IG_MU_CAP = 1e8

_VAR_FLOOR = 1e-300


class RngStream:
    """Reproducible, splittable random stream (Philox counter-based)."""

    def __init__(self, seed, key=()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence((self.seed,) + self.key)
        self.gen = np.random.Generator(np.random.Philox(seq))

    @property
    def stream_id(self):
        return self.key

    def substream(self, *key):
        """Derive an independent stream; equal keys give equal streams."""
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    # Bulk draws used to feed the scan kernels.
    def uniforms(self, shape):
        return self.gen.random(shape)

    def normals(self, shape):
        return self.gen.standard_normal(shape)


def sample_gaussian(mean, variance, rng):
    """Draw from N(mean, variance); degenerate variance returns the mean."""
    if variance <= 0:
        raise NumericsError(f"variance must be positive, got {variance}")
    if variance < _VAR_FLOOR:
        return float(mean)
    return float(mean + np.sqrt(variance) * rng.gen.standard_normal())


def sample_gamma(shape, rate, rng):
    """Draw from Gamma(shape, rate) (rate parameterization, mean shape/rate)."""
    if shape <= 0 or rate <= 0:
        raise NumericsError(f"gamma parameters must be positive, got ({shape}, {rate})")
    x = float(rng.gen.gamma(shape, 1.0 / rate))
    # shape below ~1e-3 routinely underflows to exactly 0; the precisions this
    # feeds must stay positive.
    return max(x, 5e-324) if x == 0.0 else x


def sample_dirichlet(alphas, rng):
    """Draw a probability vector from Dirichlet(alphas)."""
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.ndim != 1 or alphas.size == 0 or np.any(alphas <= 0):
        raise NumericsError("dirichlet parameters must be a vector of positives")
    if alphas.size == 1:
        return np.array([1.0])
    x = rng.gen.gamma(alphas, 1.0)
    total = x.sum()
    if total <= 0:
        # All gamma draws underflowed (tiny concentrations): fall back to a
        # single category chosen proportionally to alpha.
        out = np.zeros_like(alphas)
        out[sample_categorical(alphas / alphas.sum(), rng)] = 1.0
        return out
    return x / total


def sample_categorical(probs, rng):
    """Draw a category index from a probability vector."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any(probs < 0):
        raise NumericsError("categorical probabilities must be non-negative")
    total = probs.sum()
    if not (abs(total - 1.0) <= 1e-9):
        raise NumericsError(f"categorical probabilities sum to {total}, not 1")
    cdf = np.cumsum(probs)
    u = rng.gen.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    return min(idx, probs.size - 1)


def sample_inverse_gaussian(mu, lambda_shape, rng):
    """Draw from the inverse Gaussian IG(mu, lambda).

    Transformation-with-rejection method (one chi-square draw, one uniform).
    ``mu`` is capped at IG_MU_CAP, the guard for exact-margin degeneracy.
    """
    if mu <= 0 or lambda_shape <= 0:
        raise NumericsError(f"IG parameters must be positive, got ({mu}, {lambda_shape})")
    mu = min(float(mu), IG_MU_CAP)
    lam = float(lambda_shape)
    nu = rng.gen.standard_normal()
    y = nu * nu
    x = mu + (mu * mu * y) / (2.0 * lam) - (mu / (2.0 * lam)) * np.sqrt(
        4.0 * mu * lam * y + mu * mu * y * y)
    if x <= 0:
        # numerical cancellation for extreme draws; fall through to the
        # reciprocal branch which is exact in distribution
        return mu * mu / max(mu, 1e-300)
    u = rng.gen.random()
    if u <= mu / (mu + x):
        return float(x)
    return float(mu * mu / x)


def inverse_gaussian_cdf(x, mu, lam):
    """CDF of IG(mu, lambda); used by the distribution tests."""
    from scipy.stats import norm
    x = np.asarray(x, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.sqrt(lam / x) * (x / mu - 1.0)
        b = -np.sqrt(lam / x) * (x / mu + 1.0)
        out = norm.cdf(a) + np.exp(2.0 * lam / mu) * norm.cdf(b)
    return np.where(x <= 0, 0.0, out)
