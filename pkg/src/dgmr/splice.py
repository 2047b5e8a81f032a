"""Snapshot -> train DGM -> splice -> fine-tune: the reusable mechanism.

A splice site names a point inside a host network where every passing hidden
vector gets routed through a trained generative model's project-and-reconstruct
operation. Everything whose output feeds the site is frozen (it defined the
distribution the DGM was trained on); everything above is fine-tuned. The
DGM's own weights stay fixed during fine-tuning.

Site grammar (1-based layer indices, matching the paper's l-Deep naming):
    mlp.after.<i>
    transformer.top
    transformer.layer.<l>.post_attention
    seq2seq.encoder_output
    seq2seq.decoder_hidden      (requires a conditional DGM: the reconstruction
                                 of h_t conditions on the previous step's
                                 reconstruction, zeros at t=0)
    seq2seq.context
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import gmvae
from .gmvae import GmvaeModel, cond_pair_dataset
from .hosts.mlp import MlpClassifier, nll_loss
from .hosts.seq2seq import Seq2seqAttention, ce_loss
from .hosts.transformer import TinyTransformerEncoder, mlm_loss
from .optim import OptimizerState, optimizer_step
from .rng import Rng
from .tensor import Tensor, dropout
from .textdata import MaskPolicy, apply_policy, pad_batch

VARIANT_TO_CONDITIONAL = {"gmvae": "none", "cgmvae_a": "model_a", "cgmvae_b": "model_b"}


class SpliceError(ValueError):
    pass


@dataclass(frozen=True)
class SpliceSite:
    host_kind: str
    location: str
    dgm_variant: str

    def __post_init__(self):
        if self.dgm_variant not in VARIANT_TO_CONDITIONAL:
            raise SpliceError(f"unknown dgm variant {self.dgm_variant!r}")
        conditional = self.dgm_variant != "gmvae"
        if self.location == "decoder_hidden" and not conditional:
            raise SpliceError("seq2seq.decoder_hidden requires a conditional variant")
        if self.location != "decoder_hidden" and conditional:
            raise SpliceError(f"site {self.key} takes the unconditional gmvae")

    @property
    def key(self) -> str:
        return f"{self.host_kind}.{self.location}"


def parse_site(text: str, dgm_variant: Optional[str] = None) -> SpliceSite:
    parts = text.split(".")
    kind = parts[0]
    if kind == "mlp" and len(parts) == 3 and parts[1] == "after" and parts[2].isdigit():
        location = f"after.{int(parts[2])}"
    elif kind == "transformer" and parts[1:] == ["top"]:
        location = "top"
    elif kind == "transformer" and len(parts) == 4 and parts[1] == "layer" and parts[2].isdigit() and parts[3] == "post_attention":
        location = f"layer.{int(parts[2])}.post_attention"
    elif kind == "seq2seq" and len(parts) == 2 and parts[1] in ("encoder_output", "decoder_hidden", "context"):
        location = parts[1]
    else:
        raise SpliceError(f"unparseable site {text!r}")
    if dgm_variant is None:
        dgm_variant = "cgmvae_b" if location == "decoder_hidden" else "gmvae"
    return SpliceSite(kind, location, dgm_variant)


def site_dim(host, site: SpliceSite) -> int:
    if site.host_kind == "mlp":
        idx = int(site.location.split(".")[1])
        return host.sizes[idx - 1]
    if site.host_kind == "transformer":
        return host.cfg.dim
    if site.location == "context":
        return 2 * host.cfg.hidden
    return host.cfg.hidden


@dataclass
class HiddenStateDataset:
    """Hidden vectors snapshotted at one site, padding excluded."""

    vectors: np.ndarray  # (N, D) float32
    cond: Optional[np.ndarray] = None  # (N, D_h) float32 for conditional variants
    meta: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float32)
        if self.cond is not None:
            self.cond = np.asarray(self.cond, dtype=np.float32)
            if self.cond.shape[0] != self.vectors.shape[0]:
                raise ValueError("conditioning rows differ from vector rows")


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("DGMR_THREADS", "1")))
    except ValueError:
        return 1


def snapshot_hidden(host, site: SpliceSite, data, limit: Optional[int] = None, meta: Optional[dict] = None) -> HiddenStateDataset:
    """Collect one vector per token / step / sentence at the site, padding excluded.

    data is host-shaped:
      mlp:         (inputs (N, in_dim) float32, _)        -> one vector per sample
      transformer: [(ids, attn_mask), ...] padded batches -> one vector per real token
      seq2seq:     [(src_ids, src_mask, dec_in, dec_mask), ...]
                   encoder_output -> one vector per sentence
                   context        -> one vector per real target step
                   decoder_hidden -> consecutive-pair (cond, target) per sentence
    """
    meta = dict(meta or {})
    meta.setdefault("site", site.key)
    cond = None

    if site.host_kind == "mlp":
        x = np.asarray(data[0], dtype=np.float32)
        if limit is not None:
            x = x[:limit]
        layer_index = int(site.location.split(".")[1])
        chunks = []
        for start in range(0, x.shape[0], 1024):
            h = host.hidden_at(Tensor(x[start : start + 1024]), layer_index)
            chunks.append(h.data.astype(np.float32))
        vectors = np.concatenate(chunks, axis=0)

    elif site.host_kind == "transformer":
        tap_key = "top" if site.location == "top" else site.location
        remaining = limit

        def snap_batch(batch):
            ids, mask = batch
            rec = {}
            host.forward(ids, mask, rng=None, taps={tap_key: lambda t: rec.update(v=t.data) or t})
            return rec["v"][mask.astype(bool)].astype(np.float32)

        batches = []
        for batch in data:
            if remaining is not None:
                if remaining <= 0:
                    break
                ids, mask = batch
                ids, mask = ids[:remaining], mask[:remaining]
                remaining -= ids.shape[0]
                batch = (ids, mask)
            batches.append(batch)
        workers = _workers()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                chunks = list(pool.map(snap_batch, batches))
        else:
            chunks = [snap_batch(b) for b in batches]
        vectors = np.concatenate(chunks, axis=0)

    elif site.host_kind == "seq2seq":
        vec_chunks: List[np.ndarray] = []
        cond_chunks: List[np.ndarray] = []
        remaining = limit
        for src_ids, src_mask, dec_in, dec_mask in data:
            if remaining is not None:
                if remaining <= 0:
                    break
                src_ids, src_mask = src_ids[:remaining], src_mask[:remaining]
                dec_in, dec_mask = dec_in[:remaining], dec_mask[:remaining]
                remaining -= src_ids.shape[0]
            if site.location == "encoder_output":
                _, s0 = host.encode(src_ids, src_mask)
                vec_chunks.append(s0.data.astype(np.float32))
                continue
            collect: dict = {}
            host.forward(src_ids, src_mask, dec_in, collect=collect)
            if site.location == "context":
                steps = np.stack([c.data for c in collect["contexts"]], axis=1)  # (B, T, 2H)
                vec_chunks.append(steps[dec_mask.astype(bool)].astype(np.float32))
            else:  # decoder_hidden: consecutive pairs within each sentence
                steps = np.stack([h.data for h in collect["dec_hidden"]], axis=1)  # (B, T, H)
                seqs = [steps[b][dec_mask[b].astype(bool)] for b in range(steps.shape[0])]
                h_arr, x_arr = cond_pair_dataset(seqs)
                if h_arr.shape[0]:
                    cond_chunks.append(h_arr)
                    vec_chunks.append(x_arr)
        vectors = np.concatenate(vec_chunks, axis=0) if vec_chunks else np.zeros((0, site_dim(host, site)), np.float32)
        if site.location == "decoder_hidden":
            cond = np.concatenate(cond_chunks, axis=0) if cond_chunks else np.zeros((0, site_dim(host, site)), np.float32)
    else:
        raise SpliceError(f"site/host mismatch: {site.key}")

    meta["count"] = int(vectors.shape[0])
    meta["dim"] = int(vectors.shape[1])
    return HiddenStateDataset(vectors=vectors, cond=cond, meta=meta)


# ---------------------------------------------------------------- stub DGM

@dataclass
class _StubConfig:
    dim_x: int
    conditional: str = "none"
    dim_h: int = 0
    sigma_dec: float = 0.0


class IdentityDgm:
    """Pass-through stand-in used by the identity-splice equivalence audits."""

    def __init__(self, dim_x: int, conditional: str = "none", dim_h: int = 0):
        self.config = _StubConfig(dim_x, conditional, dim_h)

    def reconstruct(self, v, cond=None, rng=None, mode="sample"):
        return v

    def params(self):
        return {}


def _reconstruct(dgm, v, cond, rng, mode):
    if isinstance(dgm, GmvaeModel):
        return gmvae.reconstruct(dgm, v, h=cond, rng=rng, mode=mode)
    return dgm.reconstruct(v, cond=cond, rng=rng, mode=mode)


# ---------------------------------------------------------------- spliced host

class SplicedHost:
    """A host with one stochastic layer at `site` and a freeze boundary below it.

    `kind` is "dgm" for generative-reconstruction splices and "dropout" for the
    comparison arm that injects plain dropout at the same site with the same
    freeze boundary.
    """

    def __init__(self, host, site: SpliceSite, dgm=None, noise_mode: str = "sample", dropout_rate: Optional[float] = None):
        if noise_mode not in ("sample", "mean"):
            raise SpliceError(f"noise_mode must be sample or mean, got {noise_mode!r}")
        self.host = host
        self.site = site
        self.dgm = dgm
        self.noise_mode = noise_mode
        self.dropout_rate = dropout_rate
        self.kind = "dropout" if dropout_rate is not None else "dgm"
        if site.host_kind == "mlp":
            self.freeze_boundary = host.frozen_param_names(int(site.location.split(".")[1]))
        else:
            self.freeze_boundary = host.frozen_param_names(site.location)
        host.set_trainable(self.freeze_boundary, False)
        if dgm is not None:
            for p in dgm.params().values():
                p.requires_grad = False

    # -- tap construction --------------------------------------------------

    def _dgm_tap(self, rng: Optional[Rng], mode: str) -> Callable:
        flatten = self.site.host_kind == "transformer"

        if self.site.location == "decoder_hidden":
            dim_h = self.dgm.config.dim_h
            prev: dict = {"v": None}

            def tap(t: Tensor) -> Tensor:
                b = t.data.shape[0]
                if prev["v"] is None or prev["v"].data.shape[0] != b:
                    prev["v"] = Tensor(np.zeros((b, dim_h), dtype=np.float32))
                out = _reconstruct(self.dgm, t, prev["v"], rng, mode)
                prev["v"] = Tensor(np.asarray(out.data, dtype=np.float32).copy())
                return out

            return tap

        def tap(t: Tensor) -> Tensor:
            if flatten and t.data.ndim == 3:
                b, s, d = t.data.shape
                from .tensor import reshape

                flat = reshape(t, (b * s, d))
                out = _reconstruct(self.dgm, flat, None, rng, mode)
                return reshape(out, (b, s, d))
            return _reconstruct(self.dgm, t, None, rng, mode)

        return tap

    def taps(self, rng: Optional[Rng] = None, train: bool = True):
        """Host-appropriate tap structure for one forward pass.

        For the dgm kind, train=True uses the configured noise mode and
        train=False the deterministic mean path; the dropout arm is identity
        outside training, like any dropout layer at inference.
        """
        if self.kind == "dropout":
            if not train or self.dropout_rate == 0.0:
                fn = lambda t: t
            else:
                fn = lambda t: dropout(t, self.dropout_rate, rng)
        else:
            mode = self.noise_mode if train else "mean"
            if mode == "sample" and rng is None:
                raise SpliceError("sample-mode forward needs an rng")
            fn = self._dgm_tap(rng, mode)
        if self.site.host_kind == "mlp":
            return (int(self.site.location.split(".")[1]), fn)
        key = "top" if self.site.location == "top" else self.site.location
        return {key: fn}

    # -- forwards ------------------------------------------------------------

    def forward(self, *args, rng: Optional[Rng] = None, train: bool = True):
        taps = self.taps(rng, train)
        if self.site.host_kind == "mlp":
            return self.host.forward(args[0], tap=taps)
        if self.site.host_kind == "transformer":
            ids, mask = args
            return self.host.forward(ids, mask, rng=None, taps=taps)
        src_ids, src_mask, dec_in = args
        return self.host.forward(src_ids, src_mask, dec_in, taps=taps)

    def trainable_params(self) -> Dict[str, Tensor]:
        return self.host.trainable_params()

    def frozen_checksum(self) -> float:
        params = self.host.params()
        return float(sum(np.float64(params[n].data).sum() for n in sorted(self.freeze_boundary)))


def splice_layer(host, site: SpliceSite, dgm, noise_mode: str = "sample") -> SplicedHost:
    expected_cond = VARIANT_TO_CONDITIONAL[site.dgm_variant]
    if dgm.config.conditional != expected_cond:
        raise SpliceError(
            f"site {site.key} wants conditional={expected_cond!r}, dgm has {dgm.config.conditional!r}"
        )
    dim = site_dim(host, site)
    if dgm.config.dim_x != dim:
        raise SpliceError(f"site {site.key} vectors have dim {dim}, dgm.dim_x is {dgm.config.dim_x}")
    if site.location == "decoder_hidden" and dgm.config.dim_h != dim:
        raise SpliceError(f"decoder_hidden conditioning dim {dgm.config.dim_h} != state dim {dim}")
    return SplicedHost(host, site, dgm=dgm, noise_mode=noise_mode)


def dropout_splice(host, site: SpliceSite, rate: float) -> SplicedHost:
    if not 0.0 <= rate < 1.0:
        raise SpliceError(f"dropout rate {rate} outside [0, 1)")
    return SplicedHost(host, site, dropout_rate=rate)


# ---------------------------------------------------------------- fine-tuning

def _val_split(n: int, fraction: float, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    order = Rng(seed, stream=911).permutation(n)
    n_val = max(1, int(round(n * fraction))) if n > 1 and fraction > 0 else 0
    return order[n_val:], order[:n_val]


def finetune_above(
    spliced: SplicedHost,
    data,
    epochs: int,
    rng: Rng,
    lr: Optional[float] = None,
    batch_size: int = 32,
    val_fraction: float = 0.1,
    val_data=None,
    optimizer: Optional[str] = None,
    curve_hook: Optional[Callable] = None,
) -> Dict[str, List[float]]:
    """Update only the parameters above the freeze boundary; the DGM stays fixed.

    Returns {"train": per-epoch train loss, "val": per-epoch val loss}. The
    validation pass runs the deterministic path (mean-mode reconstruction /
    dropout off) on `val_data` when given, else on a seed-fixed 10% split.
    Divergence aborts with the epoch and batch index.
    """
    kind = spliced.site.host_kind
    if optimizer is None:
        optimizer = "sgd" if kind == "mlp" else "adam"
    if lr is None:
        lr = 0.01 if kind == "mlp" else 1e-3
    params = spliced.trainable_params()
    opt = OptimizerState(optimizer, lr)
    curves: Dict[str, List[float]] = {"train": [], "val": []}

    batches_of = make_batcher(kind, data, val_fraction, rng.seed, val_data=val_data)

    for epoch in range(epochs):
        noise = rng.spawn(10_000 + epoch)
        total = 0.0
        count = 0
        for bi, (args, loss_args, weight) in enumerate(batches_of("train", epoch, batch_size)):
            out = spliced.forward(*args, rng=noise, train=True)
            loss = _host_loss(kind, out, loss_args)
            val = float(loss.data)
            if not np.isfinite(val):
                raise SpliceError(f"fine-tune diverged at epoch {epoch} batch {bi}")
            loss.backward()
            optimizer_step(params, opt)
            total += val * weight
            count += weight
        train_loss = total / max(count, 1)

        vtotal = 0.0
        vcount = 0
        for args, loss_args, weight in batches_of("val", epoch, max(batch_size, 256)):
            out = spliced.forward(*args, rng=None, train=False)
            vtotal += float(_host_loss(kind, out, loss_args).data) * weight
            vcount += weight
        val_loss = vtotal / max(vcount, 1)

        curves["train"].append(train_loss)
        curves["val"].append(val_loss)
        if curve_hook is not None:
            curve_hook(epoch, train_loss, val_loss)
    return curves


def _host_loss(kind: str, out, loss_args):
    if kind == "mlp":
        return nll_loss(out, loss_args)
    if kind == "transformer":
        targets, lmask = loss_args
        return mlm_loss(out, targets, lmask)
    targets, tmask = loss_args
    return ce_loss(out, targets, tmask)


def make_batcher(kind: str, data, val_fraction: float, seed: int, val_data=None):
    """Returns batches_of(split, epoch, batch_size) yielding (args, loss_args, n).

    With `val_data`, the whole of `data` trains and `val_data` validates;
    otherwise a seed-fixed `val_fraction` split of `data` is held out.
    """
    if kind == "mlp":
        x, y = np.asarray(data[0], dtype=np.float32), np.asarray(data[1])
        if val_data is not None:
            xv, yv = np.asarray(val_data[0], dtype=np.float32), np.asarray(val_data[1])
            tr, va = np.arange(x.shape[0]), None
        else:
            tr, va = _val_split(x.shape[0], val_fraction, seed)

        def batches(split, epoch, bs):
            if split == "val" and val_data is not None:
                for s in range(0, xv.shape[0], bs):
                    yield (Tensor(xv[s : s + bs]),), yv[s : s + bs], min(bs, xv.shape[0] - s)
                return
            idx = tr if split == "train" else va
            if split == "train":
                idx = idx[Rng(seed, stream=epoch + 1).permutation(len(idx))]
            for s in range(0, len(idx), bs):
                sel = idx[s : s + bs]
                yield (Tensor(x[sel]),), y[sel], len(sel)

        return batches

    if kind == "transformer":
        sentences = data["sentences"]
        policy: MaskPolicy = data["policy"]
        stop_ids = data["stop_ids"]
        vocab = data["vocab"]
        mask_seed = data.get("mask_seed", seed)
        if val_data is not None:
            val_sentences = val_data
            tr = np.arange(len(sentences))
            va = np.arange(len(val_sentences))
        else:
            val_sentences = sentences
            tr, va = _val_split(len(sentences), val_fraction, seed)

        def mask_ids(ids, stream):
            return apply_policy(ids, policy, stop_ids, stream, vocab)

        def batches(split, epoch, bs):
            pool = sentences if split == "train" else val_sentences
            idx = tr if split == "train" else va
            if split == "train":
                idx = idx[Rng(seed, stream=epoch + 1).permutation(len(idx))]
                epoch_tag = epoch + 1  # dynamic re-masking each epoch
            else:
                epoch_tag = 0  # fixed val masks
            root = Rng(mask_seed, stream=epoch_tag)
            for s in range(0, len(idx), bs):
                sel = idx[s : s + bs]
                originals = [pool[i] for i in sel]
                masked, lmasks = [], []
                for i, sent in zip(sel, originals):
                    m, pos = mask_ids(sent, root.spawn(int(i)))
                    masked.append(m)
                    lmasks.append(pos)
                ids, amask = pad_batch(masked)
                targets, _ = pad_batch(originals)
                loss_mask = np.zeros_like(amask)
                for r, pos in enumerate(lmasks):
                    for p in pos:
                        loss_mask[r, p] = 1.0
                yield (ids, amask), (targets, loss_mask), len(sel)

        return batches

    # seq2seq: data = {"pairs": [(masked source ids, target ids), ...], bos/eos ids}
    pairs = data["pairs"]
    bos = data.get("bos_id", 3)
    eos = data.get("eos_id", 4)
    if val_data is not None:
        val_pairs = val_data
        tr = np.arange(len(pairs))
        va = np.arange(len(val_pairs))
    else:
        val_pairs = pairs
        tr, va = _val_split(len(pairs), val_fraction, seed)

    def batches(split, epoch, bs):
        pool = pairs if split == "train" else val_pairs
        idx = tr if split == "train" else va
        if split == "train":
            idx = idx[Rng(seed, stream=epoch + 1).permutation(len(idx))]
        for s in range(0, len(idx), bs):
            sel = idx[s : s + bs]
            src = [pool[i][0] for i in sel]
            tgt = [pool[i][1] for i in sel]
            src_ids, src_mask = pad_batch(src)
            dec_in, _ = pad_batch([[bos] + t for t in tgt])
            targets, tmask = pad_batch([t + [eos] for t in tgt])
            width = targets.shape[1]
            if dec_in.shape[1] < width:
                dec_in = np.pad(dec_in, ((0, 0), (0, width - dec_in.shape[1])))
            yield (src_ids, src_mask, dec_in[:, :width]), (targets, tmask), len(sel)

    return batches


def dropout_baseline(
    host,
    site: SpliceSite,
    rate: float,
    data,
    epochs: int,
    rng: Rng,
    lr: Optional[float] = None,
    batch_size: int = 32,
    val_fraction: float = 0.1,
    val_data=None,
    optimizer: Optional[str] = None,
    curve_hook: Optional[Callable] = None,
) -> Tuple[SplicedHost, Dict[str, List[float]]]:
    """Identical pipeline with dropout in place of the DGM at the same site."""
    arm = dropout_splice(host, site, rate)
    curves = finetune_above(
        arm, data, epochs, rng, lr=lr, batch_size=batch_size,
        val_fraction=val_fraction, val_data=val_data, optimizer=optimizer, curve_hook=curve_hook,
    )
    return arm, curves
