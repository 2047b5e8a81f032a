"""dgmr: stochastic reconstruction layers for neural hosts.

Train a (conditional) Gaussian-mixture VAE on a host network's hidden
activations, splice its project-and-reconstruct operation back in as a
noise-injecting layer, freeze everything below, and fine-tune the rest.
"""

from .rng import Rng, seed_rng
from .tensor import Tensor

__all__ = ["Rng", "seed_rng", "Tensor"]
__version__ = "0.1.0"
