"""Recurrent encoder-decoder with Luong-style global attention.

Desk-scale: one bidirectional gated-recurrent layer encodes the source; the
decoder is a single recurrent layer whose state h_t attends over encoder
states with a learned bilinear score, yielding a context vector c_t; the
vocabulary distribution reads tanh(W [h_t; c_t]). A flag switches the cell to
LSTM for fidelity with the reference configuration; attention can be disabled
to study the plain encoder-bottleneck variant.

Splice taps:
  encoder_output   the bridge vector s0 that initializes the decoder
  decoder_hidden   every decoder state h_t (the tap may keep recurrent state
                   of its own, e.g. conditioning on the previous reconstruction)
  context          every attention context c_t
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..nn import Linear, Module, glorot_uniform
from ..rng import Rng
from ..tensor import (
    ContractError,
    Tensor,
    add,
    concat,
    embedding,
    gather_last,
    log_softmax,
    matmul,
    mul,
    neg,
    reshape,
    sigmoid,
    softmax,
    sub,
    tanh,
    transpose,
    tsum,
)

NEG_INF = -1e9


@dataclass
class Seq2seqConfig:
    vocab_size: int
    emb_dim: int = 64
    hidden: int = 128
    max_len: int = 64
    cell: str = "gru"
    use_attention: bool = True
    bos_id: int = 3
    eos_id: int = 4
    pad_id: int = 0

    def __post_init__(self):
        if self.cell not in ("gru", "lstm"):
            raise ValueError(f"cell must be gru or lstm, got {self.cell!r}")


class GruCell(Module):
    def __init__(self, in_dim: int, hidden: int, rng: Rng):
        self.wx = Linear(in_dim, 3 * hidden, rng)
        self.wh = Linear(hidden, 3 * hidden, rng)
        self.hidden = hidden

    def init_state(self, batch: int):
        return Tensor(np.zeros((batch, self.hidden), dtype=np.float32))

    def step(self, x: Tensor, state):
        h = state
        n = self.hidden
        zx = self.wx(x)
        zh = self.wh(h)
        r = sigmoid(add(zx[:, :n], zh[:, :n]))
        u = sigmoid(add(zx[:, n : 2 * n], zh[:, n : 2 * n]))
        c = tanh(add(zx[:, 2 * n :], mul(r, zh[:, 2 * n :])))
        h_new = add(mul(u, h), sub(c, mul(u, c)))  # u*h + (1-u)*c
        return h_new, h_new

    def carry(self, new_state, old_state, keep: Tensor):
        return add(mul(new_state, keep), mul(old_state, sub(Tensor(np.ones_like(keep.data)), keep)))


class LstmCell(Module):
    def __init__(self, in_dim: int, hidden: int, rng: Rng):
        self.wx = Linear(in_dim, 4 * hidden, rng)
        self.wh = Linear(hidden, 4 * hidden, rng)
        self.hidden = hidden

    def init_state(self, batch: int):
        z = Tensor(np.zeros((batch, self.hidden), dtype=np.float32))
        return (z, Tensor(np.zeros((batch, self.hidden), dtype=np.float32)))

    def step(self, x: Tensor, state):
        h, c = state
        n = self.hidden
        z = add(self.wx(x), self.wh(h))
        i = sigmoid(z[:, :n])
        f = sigmoid(z[:, n : 2 * n])
        o = sigmoid(z[:, 2 * n : 3 * n])
        g = tanh(z[:, 3 * n :])
        c_new = add(mul(f, c), mul(i, g))
        h_new = mul(o, tanh(c_new))
        return h_new, (h_new, c_new)

    def carry(self, new_state, old_state, keep: Tensor):
        inv = sub(Tensor(np.ones_like(keep.data)), keep)
        return (
            add(mul(new_state[0], keep), mul(old_state[0], inv)),
            add(mul(new_state[1], keep), mul(old_state[1], inv)),
        )


def _state_h(state):
    return state[0] if isinstance(state, tuple) else state


def _make_cell(cfg: Seq2seqConfig, in_dim: int, rng: Rng):
    return GruCell(in_dim, cfg.hidden, rng) if cfg.cell == "gru" else LstmCell(in_dim, cfg.hidden, rng)


class Seq2seqAttention(Module):
    def __init__(self, cfg: Seq2seqConfig, rng: Rng):
        self.cfg = cfg
        v, e, h = cfg.vocab_size, cfg.emb_dim, cfg.hidden
        self.src_emb = Tensor(glorot_uniform(rng, v, e, (v, e)), requires_grad=True)
        self.tgt_emb = Tensor(glorot_uniform(rng, v, e, (v, e)), requires_grad=True)
        self.enc_fwd = _make_cell(cfg, e, rng)
        self.enc_bwd = _make_cell(cfg, e, rng)
        self.bridge = Linear(2 * h, h, rng)
        self.dec_cell = _make_cell(cfg, e, rng)
        if cfg.use_attention:
            self.attn_w = Tensor(glorot_uniform(rng, h, 2 * h, (h, 2 * h)), requires_grad=True)
            self.combine = Linear(3 * h, h, rng)
        else:
            self.combine = Linear(h, h, rng)
        self.out = Linear(h, v, rng)

    # ---------------------------------------------------------------- encoder

    def encode(self, src_ids: np.ndarray, src_mask: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Returns (enc_states (B,S,2H), s0 (B,H)); padded steps carry state."""
        ids = np.asarray(src_ids)
        mask = np.asarray(src_mask, dtype=np.float32)
        b, s = ids.shape
        if s == 0:
            raise ContractError("empty source")
        emb = embedding(self.src_emb, ids)
        fwd_states: List[Tensor] = [None] * s
        bwd_states: List[Tensor] = [None] * s
        state = self.enc_fwd.init_state(b)
        for t in range(s):
            keep = Tensor(mask[:, t : t + 1])
            _, new_state = self.enc_fwd.step(emb[:, t, :], state)
            state = self.enc_fwd.carry(new_state, state, keep)
            fwd_states[t] = _state_h(state)
        fwd_final = _state_h(state)
        state = self.enc_bwd.init_state(b)
        for t in reversed(range(s)):
            keep = Tensor(mask[:, t : t + 1])
            _, new_state = self.enc_bwd.step(emb[:, t, :], state)
            state = self.enc_bwd.carry(new_state, state, keep)
            bwd_states[t] = _state_h(state)
        bwd_final = _state_h(state)
        per_step = [
            reshape(concat([f, bw], axis=-1), (b, 1, 2 * self.cfg.hidden))
            for f, bw in zip(fwd_states, bwd_states)
        ]
        enc_states = concat(per_step, axis=1)
        s0 = tanh(self.bridge(concat([fwd_final, bwd_final], axis=-1)))
        return enc_states, s0

    # ---------------------------------------------------------------- decoder

    def _attend(self, h: Tensor, enc_states: Tensor, src_add_mask: np.ndarray) -> Tuple[Tensor, Tensor]:
        b = h.data.shape[0]
        proj = matmul(h, self.attn_w)  # (B, 2H)
        scores = tsum(mul(enc_states, reshape(proj, (b, 1, proj.data.shape[-1]))), axis=-1)
        scores = add(scores, Tensor(src_add_mask))
        alpha = softmax(scores, axis=-1)
        ctx = tsum(mul(enc_states, reshape(alpha, (b, alpha.data.shape[1], 1))), axis=1)
        return ctx, alpha

    def _decoder_init(self, s0: Tensor, batch: int):
        if self.cfg.cell == "gru":
            return s0
        return (s0, Tensor(np.zeros((batch, self.cfg.hidden), dtype=np.float32)))

    def forward(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        dec_in_ids: np.ndarray,
        taps: Optional[Dict[str, Callable]] = None,
        collect: Optional[dict] = None,
    ) -> Tensor:
        """Teacher-forced per-step vocabulary logits (B, T, V).

        `collect`, when given, receives s0 / enc_states / per-step attention
        weights and contexts (used by snapshotting and tests).
        """
        taps = taps or {}
        enc_states, s0 = self.encode(src_ids, src_mask)
        if "encoder_output" in taps:
            s0 = taps["encoder_output"](s0)
        mask = np.asarray(src_mask, dtype=np.float32)
        src_add_mask = ((1.0 - mask) * NEG_INF).astype(np.float32)
        dec_in = np.asarray(dec_in_ids)
        b, t = dec_in.shape
        state = self._decoder_init(s0, b)
        step_logits: List[Tensor] = []
        if collect is not None:
            collect.update({"s0": s0, "enc_states": enc_states, "attn": [], "contexts": [], "dec_hidden": []})
        emb = embedding(self.tgt_emb, dec_in)
        for i in range(t):
            h, state = self.dec_cell.step(emb[:, i, :], state)
            if collect is not None:
                collect["dec_hidden"].append(h)
            if "decoder_hidden" in taps:
                h = taps["decoder_hidden"](h)
            if self.cfg.use_attention:
                ctx, alpha = self._attend(h, enc_states, src_add_mask)
                if collect is not None:
                    collect["attn"].append(alpha)
                    collect["contexts"].append(ctx)
                if "context" in taps:
                    ctx = taps["context"](ctx)
                comb = tanh(self.combine(concat([h, ctx], axis=-1)))
            else:
                comb = tanh(self.combine(h))
            logits = self.out(comb)
            step_logits.append(reshape(logits, (b, 1, self.cfg.vocab_size)))
        return concat(step_logits, axis=1)

    def greedy_decode(
        self,
        src_ids: np.ndarray,
        src_mask: np.ndarray,
        max_len: Optional[int] = None,
        taps: Optional[Dict[str, Callable]] = None,
        topk: int = 0,
    ):
        """Free decoding from BOS until EOS (per row) or max_len; returns token
        id lists without BOS/EOS, plus per-step top-k candidates when asked."""
        taps = taps or {}
        cfg = self.cfg
        max_len = max_len or cfg.max_len
        enc_states, s0 = self.encode(src_ids, src_mask)
        if "encoder_output" in taps:
            s0 = taps["encoder_output"](s0)
        mask = np.asarray(src_mask, dtype=np.float32)
        src_add_mask = ((1.0 - mask) * NEG_INF).astype(np.float32)
        b = np.asarray(src_ids).shape[0]
        state = self._decoder_init(s0, b)
        tokens = np.full((b,), cfg.bos_id, dtype=np.int64)
        done = np.zeros(b, dtype=bool)
        outputs: List[List[int]] = [[] for _ in range(b)]
        cands: List[List[List[int]]] = [[] for _ in range(b)]
        for _ in range(max_len):
            emb = embedding(self.tgt_emb, tokens)
            h, state = self.dec_cell.step(emb, state)
            if "decoder_hidden" in taps:
                h = taps["decoder_hidden"](h)
            if cfg.use_attention:
                ctx, _ = self._attend(h, enc_states, src_add_mask)
                if "context" in taps:
                    ctx = taps["context"](ctx)
                comb = tanh(self.combine(concat([h, ctx], axis=-1)))
            else:
                comb = tanh(self.combine(h))
            logits = self.out(comb).data
            nxt = np.argmax(logits, axis=-1).astype(np.int64)
            for row in range(b):
                if not done[row]:
                    if nxt[row] == cfg.eos_id:
                        done[row] = True
                    else:
                        outputs[row].append(int(nxt[row]))
                        if topk > 0:
                            cands[row].append([int(i) for i in np.argsort(-logits[row])[:topk]])
            if done.all():
                break
            tokens = np.where(done, cfg.pad_id, nxt)
        return (outputs, cands) if topk > 0 else outputs

    # ---------------------------------------------------------------- freeze

    def frozen_param_names(self, location: str) -> set:
        names = set(self.params())
        enc = {n for n in names if n.startswith(("src_emb", "enc_fwd.", "enc_bwd.", "bridge."))}
        if location == "encoder_output":
            return enc
        dec_lower = enc | {n for n in names if n.startswith(("tgt_emb", "dec_cell."))}
        if location == "decoder_hidden":
            return dec_lower
        if location == "context":
            if not self.cfg.use_attention:
                raise ValueError("context site needs attention enabled")
            return dec_lower | {n for n in names if n.startswith("attn_w")}
        raise ValueError(f"unknown seq2seq site {location!r}")


def ce_loss(logits: Tensor, target_ids: np.ndarray, target_mask: np.ndarray) -> Tensor:
    """Cross entropy over non-padding target steps."""
    weights = np.asarray(target_mask, dtype=logits.data.dtype)
    denom = max(float(weights.sum()), 1.0)
    logp = log_softmax(logits, axis=-1)
    picked = gather_last(logp, np.asarray(target_ids))
    return mul(neg(tsum(mul(picked, Tensor(weights)))), 1.0 / denom)
