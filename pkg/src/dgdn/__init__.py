"""Deep generative deconvolutional image model.

Hierarchical convolutional dictionary learning with stochastic unpooling,
Bayesian max-margin supervision, Gibbs sampling for small data and stochastic
Monte Carlo EM for large data. See README for the CLI and file formats.
"""

from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"
__all__ = ["KERNEL_BACKEND", "__version__"]
