"""Diagonal Gaussians and categoricals: log densities, KL divergences,
reparameterized sampling.

Everything works on Tensors so gradients flow through means and variances;
all densities are exposed in log form only (the mixture posterior downstream
is computed in the log domain). Variances, not standard deviations, are the
canonical parameterization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import (
    DimensionError,
    DomainError,
    Tensor,
    add,
    div,
    log,
    mul,
    sqrt,
    sub,
    tsum,
)

LOG_2PI = math.log(2.0 * math.pi)
VAR_CLAMP = 1e-12


@dataclass
class DiagGaussian:
    """Diagonal Gaussian over the last axis; leading axes are batch."""

    mean: Tensor
    var: Tensor

    def __post_init__(self):
        if self.mean.shape != self.var.shape:
            raise DimensionError(f"mean/var shapes differ: {self.mean.shape} vs {self.var.shape}")

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]


@dataclass
class Categorical:
    probs: Tensor

    def __post_init__(self):
        p = self.probs.data
        if np.any(p < -1e-7) or np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-6):
            raise DomainError("categorical probs must be nonnegative and sum to 1")

    @property
    def k(self) -> int:
        return self.probs.shape[-1]


def _check_var(var: Tensor) -> None:
    if np.any(var.data <= 0):
        raise DomainError("variance must be strictly positive")


def gaussian_logpdf(x: Tensor, g: DiagGaussian) -> Tensor:
    """Summed log density over the last axis; batch axes broadcast."""
    _check_var(g.var)
    if x.shape[-1] != g.dim:
        raise DimensionError(f"x dim {x.shape[-1]} vs gaussian dim {g.dim}")
    diff = sub(x, g.mean)
    quad = div(mul(diff, diff), g.var)
    return mul(tsum(add(add(log(g.var), LOG_2PI), quad), axis=-1), -0.5)


def kl_gaussians(q: DiagGaussian, p: DiagGaussian) -> Tensor:
    """Closed-form KL(q || p) for diagonal Gaussians, summed over the last axis."""
    _check_var(q.var)
    _check_var(p.var)
    if q.dim != p.dim:
        raise DimensionError(f"KL dims differ: {q.dim} vs {p.dim}")
    dmean = sub(p.mean, q.mean)
    terms = add(
        add(div(q.var, p.var), div(mul(dmean, dmean), p.var)),
        sub(sub(log(p.var), log(q.var)), 1.0),
    )
    return mul(tsum(terms, axis=-1), 0.5)


def kl_categorical_uniform(c: Categorical) -> Tensor:
    """KL(c || Uniform(K)) = sum p_i log(p_i K), with 0 log 0 := 0. Range [0, log K]."""
    p = c.probs
    k = c.k
    # p log p computed safely: contributions vanish where p == 0
    safe = Tensor(np.where(p.data > 0, p.data, 1.0).astype(p.data.dtype))
    plogp = mul(p, log(safe))
    return add(tsum(plogp, axis=-1), math.log(k))


def kl_standard_normal(q: DiagGaussian) -> Tensor:
    """KL(q || N(0, I)) without building a constant prior."""
    _check_var(q.var)
    terms = sub(sub(add(q.var, mul(q.mean, q.mean)), 1.0), log(q.var))
    return mul(tsum(terms, axis=-1), 0.5)


def reparam_sample(g: DiagGaussian, rng: Rng) -> Tensor:
    """mean + sqrt(var) * eps with eps ~ N(0, I); grads flow to mean and var."""
    var = g.var
    if np.any(var.data < VAR_CLAMP):
        # boundary contract: zero variance collapses to the mean; the clamp
        # keeps the graph alive where var is above the floor
        from .tensor import relu

        var = add(relu(sub(var, VAR_CLAMP)), VAR_CLAMP)
    eps = Tensor(rng.normal(g.mean.shape).astype(g.mean.data.dtype))
    return add(g.mean, mul(sqrt(var), eps))
