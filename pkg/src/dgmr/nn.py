"""Small layer toolkit shared by the GMVAE and the host networks.

A Module discovers its parameters by scanning attributes: Tensor attributes
are parameters, Module attributes (or lists of Modules) are children. Names
are dotted paths, which the checkpoint format, the optimizer state and the
splice freeze boundaries all key on.
"""

from __future__ import annotations

import math
from typing import Dict, List

import numpy as np

from .rng import Rng
from .tensor import Tensor, add, dropout, matmul, relu


def glorot_uniform(rng: Rng, fan_in: int, fan_out: int, shape, dtype=np.float32) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return ((rng.uniform(shape) * 2.0 - 1.0) * a).astype(dtype)


class Module:
    def _children(self):
        for key in sorted(vars(self)):
            val = getattr(self, key)
            if isinstance(val, (Tensor, Module)):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, (Tensor, Module)):
                        yield f"{key}.{i}", item

    def params(self) -> Dict[str, Tensor]:
        out: Dict[str, Tensor] = {}
        for name, val in self._children():
            if isinstance(val, Tensor):
                out[name] = val
            else:
                for sub, p in val.params().items():
                    out[f"{name}.{sub}"] = p
        return out

    def trainable_params(self) -> Dict[str, Tensor]:
        return {n: p for n, p in self.params().items() if p.requires_grad}

    def set_trainable(self, names, trainable: bool) -> None:
        all_params = self.params()
        for n in names:
            all_params[n].requires_grad = trainable

    def load_state(self, arrays: Dict[str, np.ndarray]) -> None:
        params = self.params()
        missing = sorted(set(params) - set(arrays))
        extra = sorted(set(arrays) - set(params))
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={missing[:4]} extra={extra[:4]}")
        for name, p in params.items():
            arr = arrays[name]
            if arr.shape != p.data.shape:
                raise ValueError(f"checkpoint shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def state(self) -> Dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.params().items()}


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: Rng, dtype=np.float32):
        self.w = Tensor(glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim), dtype), requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)


class LayerNorm(Module):
    """Affine layer-normalization over the last axis."""

    def __init__(self, dim: int, dtype=np.float32):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        from .tensor import layer_norm, mul

        return add(mul(layer_norm(x), self.gain), self.bias)


class MlpStack(Module):
    """`depth` hidden relu layers of `width` units, with optional dropout on hidden activations."""

    def __init__(self, in_dim: int, width: int, depth: int, rng: Rng, dropout_rate: float = 0.0, dtype=np.float32):
        self.layers: List[Linear] = []
        d = in_dim
        for _ in range(depth):
            self.layers.append(Linear(d, width, rng, dtype))
            d = width
        self.out_dim = d
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, rng: Rng | None = None) -> Tensor:
        h = x
        for layer in self.layers:
            h = relu(layer(h))
            if rng is not None and self.dropout_rate > 0.0:
                h = dropout(h, self.dropout_rate, rng)
        return h
