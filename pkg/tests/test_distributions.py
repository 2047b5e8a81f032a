import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgmr.distributions import (
    Categorical,
    DiagGaussian,
    gaussian_logpdf,
    kl_categorical_uniform,
    kl_gaussians,
    kl_standard_normal,
    reparam_sample,
)
from dgmr.rng import Rng
from dgmr.tensor import DimensionError, DomainError, Tensor, tsum


def gauss(mean, var, dtype=np.float64):
    return DiagGaussian(Tensor(np.asarray(mean, dtype=dtype)), Tensor(np.asarray(var, dtype=dtype)))


def oracle_logpdf(x, mean, var):
    """Independent scripted evaluation of the diagonal-normal log density."""
    x, mean, var = (np.asarray(v, dtype=np.float64) for v in (x, mean, var))
    return float(sum(-0.5 * (math.log(2 * math.pi * v) + (a - m) ** 2 / v) for a, m, v in zip(x, mean, var)))


# -------------------------------------------------------------- gaussian_logpdf

def test_standard_normal_at_mode():
    lp = gaussian_logpdf(Tensor(np.zeros(1)), gauss([0.0], [1.0]))
    assert abs(lp.item() - (-0.5 * math.log(2 * math.pi))) < 1e-9


def test_logpdf_at_mean_drops_quadratic_term():
    var = [0.3, 2.0, 5.5]
    lp = gaussian_logpdf(Tensor(np.array([1.0, -2.0, 0.5])), gauss([1.0, -2.0, 0.5], var))
    expected = -0.5 * sum(math.log(2 * math.pi * v) for v in var)
    assert abs(lp.item() - expected) < 1e-9


def test_logpdf_matches_scripted_oracle():
    rng = Rng(11)
    for _ in range(10):
        x = rng.normal(5)
        mean = rng.normal(5)
        var = rng.uniform(5) + 0.1
        got = gaussian_logpdf(Tensor(x), gauss(mean, var)).item()
        assert abs(got - oracle_logpdf(x, mean, var)) < 1e-6


def test_logpdf_rejects_bad_var():
    with pytest.raises(DomainError):
        gaussian_logpdf(Tensor(np.zeros(2)), gauss([0, 0], [1.0, 0.0]))


def test_logpdf_dim_mismatch():
    with pytest.raises(DimensionError):
        gaussian_logpdf(Tensor(np.zeros(3)), gauss([0, 0], [1, 1]))


def test_logpdf_maximized_at_mean():
    g = gauss([0.3, -1.0], [0.5, 2.0])
    at_mean = gaussian_logpdf(Tensor(np.array([0.3, -1.0])), g).item()
    rng = Rng(3)
    for _ in range(50):
        x = np.array([0.3, -1.0]) + rng.normal(2) * 0.7
        assert gaussian_logpdf(Tensor(x), g).item() <= at_mean


# -------------------------------------------------------------- kl_gaussians

def test_kl_of_identical_is_zero():
    q = gauss([0.2, -3.0], [0.7, 1.1])
    p = gauss([0.2, -3.0], [0.7, 1.1])
    assert abs(kl_gaussians(q, p).item()) < 1e-12


def test_kl_unit_shift_is_half():
    assert abs(kl_gaussians(gauss([1.0], [1.0]), gauss([0.0], [1.0])).item() - 0.5) < 1e-12


def test_kl_matches_monte_carlo():
    """Closed form within 3 standard errors of a 1e6-sample MC estimate (20 cases)."""
    for case in range(20):
        rng = Rng(1000 + case)
        qm, pm = rng.normal(5), rng.normal(5)
        qv, pv = rng.uniform(5) * 2 + 0.2, rng.uniform(5) * 2 + 0.2
        n = 1_000_000
        z = qm + np.sqrt(qv) * rng.normal((n, 5))
        logq = -0.5 * (np.log(2 * np.pi * qv) + (z - qm) ** 2 / qv).sum(axis=1)
        logp = -0.5 * (np.log(2 * np.pi * pv) + (z - pm) ** 2 / pv).sum(axis=1)
        diff = logq - logp
        mc, se = diff.mean(), diff.std(ddof=1) / math.sqrt(n)
        closed = kl_gaussians(gauss(qm, qv), gauss(pm, pv)).item()
        assert abs(closed - mc) < 3 * se, f"case {case}: {closed} vs {mc} +- {se}"


def test_kl_standard_normal_agrees_with_generic():
    rng = Rng(5)
    q = gauss(rng.normal(4), rng.uniform(4) + 0.3)
    p = gauss(np.zeros(4), np.ones(4))
    assert abs(kl_standard_normal(q).item() - kl_gaussians(q, p).item()) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_kl_nonneg_property(seed):
    rng = Rng(seed)
    dim = int(rng.integers(1, 6))
    q = gauss(rng.normal(dim) * 3, rng.uniform(dim) * 4 + 1e-3)
    p = gauss(rng.normal(dim) * 3, rng.uniform(dim) * 4 + 1e-3)
    assert kl_gaussians(q, p).item() >= -1e-9


def test_kl_dim_mismatch():
    with pytest.raises(DimensionError):
        kl_gaussians(gauss([0], [1]), gauss([0, 0], [1, 1]))


# -------------------------------------------------------------- categorical KL

def test_uniform_categorical_kl_zero():
    c = Categorical(Tensor(np.full(4, 0.25)))
    assert abs(kl_categorical_uniform(c).item()) < 1e-9


def test_one_hot_kl_is_log_k():
    c = Categorical(Tensor(np.array([0.0, 0.0, 0.0, 1.0])))
    assert abs(kl_categorical_uniform(c).item() - math.log(4)) < 1e-9


def test_half_half_kl_is_log_2():
    c = Categorical(Tensor(np.array([0.5, 0.5, 0.0, 0.0])))
    assert abs(kl_categorical_uniform(c).item() - math.log(2)) < 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_categorical_kl_in_range(seed):
    rng = Rng(seed)
    k = int(rng.integers(2, 8))
    p = rng.uniform(k) + 1e-9
    p /= p.sum()
    val = kl_categorical_uniform(Categorical(Tensor(p))).item()
    assert -1e-9 <= val <= math.log(k) + 1e-9


def test_categorical_validates():
    with pytest.raises(DomainError):
        Categorical(Tensor(np.array([0.5, 0.2])))


# -------------------------------------------------------------- reparam_sample

def test_zero_var_collapses_to_mean():
    g = gauss([1.5, -2.0], [0.0, 0.0])
    s = reparam_sample(g, Rng(0))
    np.testing.assert_allclose(s.data, [1.5, -2.0], atol=2e-6)


def test_sample_statistics():
    rng = Rng(21)
    n = 100_000
    g = DiagGaussian(Tensor(np.full((n, 1), 2.0)), Tensor(np.full((n, 1), 4.0)))
    s = reparam_sample(g, rng).data
    assert abs(s.mean() - 2.0) < 2 * (2.0 / math.sqrt(n))
    assert abs(s.var() - 4.0) / 4.0 < 0.05


def test_sample_gradient_wrt_mean_is_identity():
    mean = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    g = DiagGaussian(mean, Tensor(np.ones(3), dtype=np.float64))
    tsum(reparam_sample(g, Rng(4))).backward()
    np.testing.assert_array_equal(mean.grad, np.ones(3))


def test_reparam_grad_of_expectation_matches_fd():
    """E[sample] = mean: pathwise gradient under common random numbers."""
    base = Rng(9)
    eps = base.normal((2000, 3))

    def estimate(mean_val):
        return float((mean_val + np.sqrt(1.3) * eps).mean())

    m = np.array([0.4, -0.2, 1.0])
    h = 1e-4
    fd = (estimate(m + h) - estimate(m - h)) / (2 * h)
    assert abs(fd - 1.0) < 1e-6
