"""Bayesian max-margin head: hinge pseudo-likelihood, latent-scale
augmentation, shrinkage-regularized closed-form weight updates, and
one-vs-all prediction.

Weight vectors carry an appended bias coordinate (constant-1 feature) and the
bias is shrunk like any other weight. The margin scale gamma is a fixed,
configurable constant. Shrinkage is the Laplace-style reweighting
Omega^{-1} = diag(1/max(|beta|, floor)); the scale hyperpriors on omega/kappa
have no usable update and are folded into this reweighting.
"""

import numpy as np

from .distributions import sample_inverse_gaussian
from .errors import NumericsError

BETA_ABS_FLOOR = 1e-6


def append_bias(features):
    """Append the constant-1 bias column to an (N, d) feature matrix."""
    features = np.atleast_2d(np.asarray(features, dtype=np.float64))
    return np.hstack([features, np.ones((features.shape[0], 1))])


class SvmState:
    """Per-class weight vectors plus the latent scales of the augmentation."""

    def __init__(self, classes, dim_with_bias, n_examples=0):
        self.betas = np.zeros((classes, dim_with_bias))
        self.lambdas = np.ones((n_examples, classes))
        self.gamma = 1.0

    @property
    def classes(self):
        return self.betas.shape[0]

    def copy(self):
        out = SvmState(self.betas.shape[0], self.betas.shape[1],
                       self.lambdas.shape[0])
        out.betas = self.betas.copy()
        out.lambdas = self.lambdas.copy()
        out.gamma = self.gamma
        return out


def pseudo_likelihood(y, s, beta, gamma):
    """exp(-2*gamma*max(1 - y*beta^T s, 0)); equals 1 when the margin holds."""
    if gamma <= 0:
        raise NumericsError("gamma must be positive")
    m = y * float(np.dot(beta, s))
    return float(np.exp(-2.0 * gamma * max(1.0 - m, 0.0)))


def hinge_objective(features, labels, beta, gamma, regularizer=None):
    """gamma * sum_n max(1 - y_n beta^T s_n, 0) + R(beta); diagnostics only."""
    margins = labels * (features @ beta)
    loss = gamma * float(np.maximum(1.0 - margins, 0.0).sum())
    if regularizer is not None:
        loss += float(regularizer(beta))
    return loss


def sample_lambda(margin, rng):
    """Draw the latent scale: 1/lambda ~ IG(1/|1-margin|, 1)."""
    gap = abs(1.0 - margin)
    mu = 1.0 / gap if gap > 1e-300 else np.inf
    inv = sample_inverse_gaussian(min(mu, 1e8), 1.0, rng)
    return 1.0 / inv


def update_beta(features, labels, lambdas, prev_beta, gamma):
    """Closed-form maximizer of the lambda-augmented objective for one class.

    features: (N, d) rows s_n (bias already appended); labels: (N,) in {-1,+1};
    lambdas: (N,) positive; prev_beta: (d,) for the shrinkage reweighting.
    Solves [Omega^{-1} + gamma * sbar^T Lambda^{-1} sbar] beta
           = gamma * sbar^T (1 + Lambda^{-1} 1),   sbar rows = y_n s_n.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if np.any(lambdas <= 0):
        raise NumericsError("lambda scales must be positive")
    sbar = labels[:, None] * features
    inv_lam = 1.0 / lambdas
    A = gamma * (sbar.T * inv_lam) @ sbar
    rhs = gamma * sbar.T @ (1.0 + inv_lam)
    floor = BETA_ABS_FLOOR
    for _ in range(3):
        omega_inv = 1.0 / np.maximum(np.abs(prev_beta), floor)
        try:
            return np.linalg.solve(A + np.diag(omega_inv), rhs)
        except np.linalg.LinAlgError:
            floor *= 1e3
    raise NumericsError("beta update system is singular even after regularization")


def augmented_objective(features, labels, lambdas, beta, prev_beta, gamma):
    """The lambda-augmented objective that update_beta maximizes (for tests)."""
    sbar = labels[:, None] * features
    r = 1.0 + lambdas - sbar @ beta
    omega_inv = 1.0 / np.maximum(np.abs(prev_beta), BETA_ABS_FLOOR)
    return float(-(gamma * 0.5 * (r * r / lambdas).sum())
                 - 0.5 * np.dot(beta * omega_inv, beta))


def decision_values(s, betas):
    """Per-class scores beta_l^T s for a single feature vector (bias included)."""
    return np.asarray(betas) @ np.asarray(s, dtype=np.float64)


def predict(s, betas):
    """One-vs-all argmax; ties break toward the lowest class index.

    Returns (label, scores) with label in 1..C.
    """
    scores = decision_values(s, betas)
    return int(np.argmax(scores)) + 1, scores
