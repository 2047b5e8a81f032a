"""Tiny transformer encoder trained as a masked language model.

Post-norm blocks in the BERT arrangement: multi-head self-attention and a
feed-forward net, each followed by residual + layer normalization. Padding
keys receive zero attention mass; loss is computed at masked positions only.

Splice taps:
  layer.<l>.post_attention   between attention+norm and the feed-forward block
  top                        after the last block, before the vocabulary head
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from ..nn import LayerNorm, Linear, Module, glorot_uniform
from ..rng import Rng
from ..tensor import (
    ContractError,
    Tensor,
    add,
    dropout,
    embedding,
    gather_last,
    log_softmax,
    matmul,
    mul,
    neg,
    relu,
    reshape,
    softmax,
    transpose,
    tsum,
)

NEG_INF = -1e9


@dataclass
class TransformerConfig:
    vocab_size: int
    dim: int = 128
    heads: int = 4
    ffn_dim: int = 512
    layers: int = 4
    max_len: int = 64
    dropout_rate: float = 0.1
    tie_mlm_head: bool = False

    def __post_init__(self):
        if self.dim % self.heads != 0:
            raise ValueError(f"hidden size {self.dim} not divisible by {self.heads} heads")


class EncoderLayer(Module):
    def __init__(self, cfg: TransformerConfig, rng: Rng):
        d = cfg.dim
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.ln_attn = LayerNorm(d)
        self.ff1 = Linear(d, cfg.ffn_dim, rng)
        self.ff2 = Linear(cfg.ffn_dim, d, rng)
        self.ln_ffn = LayerNorm(d)
        self.heads = cfg.heads
        self.dropout_rate = cfg.dropout_rate

    def attention(self, x: Tensor, add_mask: np.ndarray, rng: Optional[Rng]) -> Tensor:
        b, t, d = x.data.shape
        h, hd = self.heads, d // self.heads

        def split(m: Tensor) -> Tensor:
            return transpose(reshape(m, (b, t, h, hd)), (0, 2, 1, 3))

        q = split(self.wq(x))
        k = split(self.wk(x))
        v = split(self.wv(x))
        scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
        scores = add(scores, Tensor(add_mask))
        attn = softmax(scores, axis=-1)
        if rng is not None and self.dropout_rate > 0:
            attn = dropout(attn, self.dropout_rate, rng)
        ctx = reshape(transpose(matmul(attn, v), (0, 2, 1, 3)), (b, t, d))
        out = self.wo(ctx)
        if rng is not None and self.dropout_rate > 0:
            out = dropout(out, self.dropout_rate, rng)
        return out

    def __call__(self, x: Tensor, add_mask: np.ndarray, rng: Optional[Rng], tap: Optional[Callable]) -> Tensor:
        x = self.ln_attn(add(x, self.attention(x, add_mask, rng)))
        if tap is not None:
            x = tap(x)
        f = self.ff2(relu(self.ff1(x)))
        if rng is not None and self.dropout_rate > 0:
            f = dropout(f, self.dropout_rate, rng)
        return self.ln_ffn(add(x, f))


class TinyTransformerEncoder(Module):
    def __init__(self, cfg: TransformerConfig, rng: Rng):
        self.cfg = cfg
        d = cfg.dim
        self.tok_emb = Tensor(glorot_uniform(rng, cfg.vocab_size, d, (cfg.vocab_size, d)), requires_grad=True)
        self.pos_emb = Tensor(glorot_uniform(rng, cfg.max_len, d, (cfg.max_len, d)), requires_grad=True)
        self.blocks: List[EncoderLayer] = [EncoderLayer(cfg, rng) for _ in range(cfg.layers)]
        if cfg.tie_mlm_head:
            self.head_bias = Tensor(np.zeros(cfg.vocab_size, dtype=np.float32), requires_grad=True)
        else:
            self.head = Linear(d, cfg.vocab_size, rng)

    def forward(
        self,
        token_ids: np.ndarray,
        attn_mask: np.ndarray,
        rng: Optional[Rng] = None,
        taps: Optional[Dict[str, Callable]] = None,
    ) -> Tensor:
        """Per-position vocabulary logits (batch, positions, vocab)."""
        taps = taps or {}
        ids = np.asarray(token_ids)
        mask = np.asarray(attn_mask, dtype=np.float32)
        b, t = ids.shape
        if t > self.cfg.max_len:
            raise ContractError(f"sequence length {t} exceeds max_len {self.cfg.max_len}")
        x = add(embedding(self.tok_emb, ids), embedding(self.pos_emb, np.arange(t)))
        if rng is not None and self.cfg.dropout_rate > 0:
            x = dropout(x, self.cfg.dropout_rate, rng)
        add_mask = ((1.0 - mask) * NEG_INF)[:, None, None, :].astype(np.float32)
        for l, block in enumerate(self.blocks, start=1):
            x = block(x, add_mask, rng, taps.get(f"layer.{l}.post_attention"))
        if "top" in taps:
            x = taps["top"](x)
        if self.cfg.tie_mlm_head:
            return add(matmul(x, transpose(self.tok_emb, (1, 0))), self.head_bias)
        return self.head(x)

    def frozen_param_names(self, location: str) -> set:
        """Parameters at or below a tap site (their outputs feed the site)."""
        names = set(self.params())
        if location == "top":
            head_prefix = "head_bias" if self.cfg.tie_mlm_head else "head."
            return {n for n in names if not n.startswith(head_prefix)}
        if location.startswith("layer.") and location.endswith(".post_attention"):
            l = int(location.split(".")[1])
            if not 1 <= l <= self.cfg.layers:
                raise ValueError(f"layer index {l} out of range")
            frozen = {"tok_emb", "pos_emb"}
            for i in range(l - 1):
                frozen |= {n for n in names if n.startswith(f"blocks.{i}.")}
            # the tapped layer's attention block (incl. its normalization) feeds the site
            for part in ("wq", "wk", "wv", "wo", "ln_attn"):
                frozen |= {n for n in names if n.startswith(f"blocks.{l - 1}.{part}.")}
            return frozen
        raise ValueError(f"unknown transformer site {location!r}")


def mlm_loss(logits: Tensor, target_ids: np.ndarray, loss_mask: np.ndarray) -> Tensor:
    """Mean negative log-likelihood over masked positions only."""
    weights = np.asarray(loss_mask, dtype=logits.data.dtype)
    denom = max(float(weights.sum()), 1.0)
    logp = log_softmax(logits, axis=-1)
    picked = gather_last(logp, np.asarray(target_ids))
    return mul(neg(tsum(mul(picked, Tensor(weights)))), 1.0 / denom)


def impute(
    model: TinyTransformerEncoder,
    masked_ids: np.ndarray,
    attn_mask: np.ndarray,
    mask_positions: List[set],
    rng: Optional[Rng] = None,
    taps: Optional[Dict[str, Callable]] = None,
    topk: int = 0,
):
    """Replace masked positions with the argmax token; unmasked positions are
    preserved verbatim. Optionally return the top-k candidates per position."""
    logits = model.forward(masked_ids, attn_mask, rng=rng, taps=taps).data
    out = np.array(masked_ids, copy=True)
    cands: List[Dict[int, List[int]]] = []
    for row, positions in enumerate(mask_positions):
        row_cands: Dict[int, List[int]] = {}
        for pos in positions:
            out[row, pos] = int(np.argmax(logits[row, pos]))
            if topk > 0:
                row_cands[pos] = [int(i) for i in np.argsort(-logits[row, pos])[:topk]]
        cands.append(row_cands)
    return (out, cands) if topk > 0 else out
