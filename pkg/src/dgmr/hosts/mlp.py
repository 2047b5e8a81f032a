"""Deep MLP image classifier: nine linear layers with relu between them,
log-softmax output, negative log-likelihood loss."""

from __future__ import annotations

from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..nn import Linear, Module
from ..rng import Rng
from ..tensor import DimensionError, Tensor, gather_last, log_softmax, mul, neg, relu, tmean

MLP_SIZES = (700, 600, 512, 256, 128, 64, 32, 16, 10)
MLP_INPUT_DIM = 784


class MlpClassifier(Module):
    def __init__(self, rng: Rng, in_dim: int = MLP_INPUT_DIM, sizes: Tuple[int, ...] = MLP_SIZES):
        self.in_dim = in_dim
        self.sizes = tuple(sizes)
        self.layers: List[Linear] = []
        d = in_dim
        for s in self.sizes:
            self.layers.append(Linear(d, s, rng))
            d = s

    def forward(self, x: Tensor, tap: Optional[Tuple[int, Callable]] = None) -> Tensor:
        """Log-probabilities (batch, classes); `tap` = (layer index 1-based, fn)
        applied to the relu output of that layer."""
        if x.data.shape[-1] != self.in_dim:
            raise DimensionError(f"expected input dim {self.in_dim}, got {x.data.shape[-1]}")
        h = x
        for i, layer in enumerate(self.layers, start=1):
            h = layer(h)
            if i < len(self.layers):
                h = relu(h)
            if tap is not None and tap[0] == i:
                h = tap[1](h)
        return log_softmax(h, axis=-1)

    def hidden_at(self, x: Tensor, layer_index: int) -> Tensor:
        """Relu output after `layer_index` (1-based): the snapshot vector."""
        captured = {}

        def record(t):
            captured["h"] = t
            return t

        self.forward(x, tap=(layer_index, record))
        return captured["h"]

    def frozen_param_names(self, after_layer: int) -> set:
        if not 1 <= after_layer < len(self.layers):
            raise ValueError(f"mlp.after.{after_layer}: layer index out of range")
        return {f"layers.{i}.{leaf}" for i in range(after_layer) for leaf in ("w", "b")}


def nll_loss(log_probs: Tensor, labels: np.ndarray) -> Tensor:
    return neg(tmean(gather_last(log_probs, np.asarray(labels))))


def accuracy(log_probs: Tensor, labels: np.ndarray) -> float:
    pred = np.argmax(log_probs.data, axis=-1)
    return float((pred == np.asarray(labels)).mean())
