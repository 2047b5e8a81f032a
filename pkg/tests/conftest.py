import numpy as np
import pytest

from dgmr.rng import Rng
from dgmr.tensor import Tensor


@pytest.fixture
def rng():
    return Rng(1234)


def finite_diff_grads(fn, params, eps=1e-3):
    """Central-difference gradient of scalar fn() w.r.t. each Tensor in `params`.

    fn must be deterministic (fix any noise with common random numbers before
    calling). Works elementwise on the flattened parameter data.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.data, dtype=np.float64)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = fn()
            flat[i] = orig - eps
            lo = fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def rel_err(a, b, floor=1e-6):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def param(rng, shape, scale=1.0, dtype=np.float64):
    return Tensor((rng.normal(shape) * scale).astype(dtype), requires_grad=True, dtype=dtype)
