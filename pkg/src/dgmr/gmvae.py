"""Gaussian-mixture VAE with two latent codes (z, w) and a categorical
component selector y, plus the conditional variants used when the layer
must condition on a context vector h.

Generative model:  w ~ N(0,I), y ~ Uniform(K), z | w,y ~ N(mu_k(w), Sigma_k(w)),
x | z ~ N(mu_dec(z), sigma^2 I).  Inference factorizes into q(z|x), q(w|x) and
an analytic q(y|w,z) proportional to the component densities of the sampled z.

The objective is a single-sample reparameterized bound with the expectation
over y carried out analytically (a K-term sum weighted by q(y|w,z)); the
components of the bound are reported separately so training curves can show
reconstruction and each KL term.

Conditional variants:
  model_a: h enters the w-encoder and a learned prior p(w|h); the x->z->x
           reconstruction path ignores h by construction.
  model_b (default): h enters the z-encoder and the component prior nets;
           p(w) stays standard normal.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .distributions import (
    VAR_CLAMP,
    Categorical,
    DiagGaussian,
    kl_gaussians,
    kl_standard_normal,
    reparam_sample,
)
from .nn import Linear, Module, MlpStack
from .optim import OptimizerState, optimizer_step
from .rng import Rng
from .tensor import (
    Tensor,
    add,
    concat,
    div,
    exp,
    log,
    log_softmax,
    mul,
    neg,
    reshape,
    softplus,
    sub,
    tmean,
    tsum,
)

LOG_2PI = math.log(2.0 * math.pi)
VAR_FLOOR = 1e-6

CONDITIONAL_KINDS = ("none", "model_a", "model_b")


class ConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass
class GmvaeConfig:
    dim_x: int
    dim_z: int
    dim_w: int
    K: int
    hidden_width: int = 64
    depth: int = 2
    sigma_dec: float = 0.1
    dropout_rate: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 256
    conditional: str = "none"
    dim_h: int = 0
    separate_prior_nets: bool = False

    def __post_init__(self):
        if min(self.dim_x, self.dim_z, self.dim_w) < 1 or self.K < 1:
            raise ConfigError("dims and K must be >= 1")
        if self.sigma_dec < 0:
            raise ConfigError("sigma_dec must be >= 0")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.conditional not in CONDITIONAL_KINDS:
            raise ConfigError(f"conditional must be one of {CONDITIONAL_KINDS}")
        if self.dim_h < 0:
            raise ConfigError("dim_h must be >= 0")
        if self.conditional == "none" and self.dim_h != 0:
            raise ConfigError("dim_h must be 0 for the unconditional model")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GmvaeConfig":
        raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown GmvaeConfig keys: {unknown}")
        return cls(**raw)


@dataclass
class ElboBreakdown:
    reconstruction: float
    kl_z: float
    kl_y: float
    kl_w: float
    total: float


class _GaussHead(Module):
    """Trunk output -> (mean, softplus-floored variance)."""

    def __init__(self, in_dim: int, out_dim: int, rng: Rng):
        self.mean = Linear(in_dim, out_dim, rng)
        self.logvar = Linear(in_dim, out_dim, rng)

    def __call__(self, h: Tensor) -> DiagGaussian:
        return DiagGaussian(self.mean(h), add(softplus(self.logvar(h)), VAR_FLOOR))


class _EncoderNet(Module):
    def __init__(self, in_dim: int, out_dim: int, cfg: GmvaeConfig, rng: Rng):
        self.trunk = MlpStack(in_dim, cfg.hidden_width, cfg.depth, rng, cfg.dropout_rate)
        self.head = _GaussHead(self.trunk.out_dim, out_dim, rng)

    def __call__(self, x: Tensor, rng: Optional[Rng] = None) -> DiagGaussian:
        return self.head(self.trunk(x, rng))


class _PriorNet(Module):
    """w(,h) -> per-component (mean, var) over z: shared trunk with K heads,
    or K fully separate networks when the config asks for literal fidelity."""

    def __init__(self, in_dim: int, cfg: GmvaeConfig, rng: Rng):
        self.separate = cfg.separate_prior_nets
        if self.separate:
            self.trunks = [MlpStack(in_dim, cfg.hidden_width, cfg.depth, rng, cfg.dropout_rate) for _ in range(cfg.K)]
            self.heads = [_GaussHead(t.out_dim, cfg.dim_z, rng) for t in self.trunks]
        else:
            self.trunk = MlpStack(in_dim, cfg.hidden_width, cfg.depth, rng, cfg.dropout_rate)
            self.heads = [_GaussHead(self.trunk.out_dim, cfg.dim_z, rng) for _ in range(cfg.K)]

    def component(self, w: Tensor, k: int, rng: Optional[Rng] = None) -> DiagGaussian:
        if self.separate:
            return self.heads[k](self.trunks[k](w, rng))
        return self.heads[k](self.trunk(w, rng))

    def all_components(self, w: Tensor, rng: Optional[Rng] = None) -> Tuple[Tensor, Tensor]:
        """Stacked means and variances, shape (batch, K, dim_z)."""
        means, variances = [], []
        shared = None if self.separate else self.trunk(w, rng)
        for k, head in enumerate(self.heads):
            g = head(self.trunks[k](w, rng)) if self.separate else head(shared)
            b = g.mean.shape[0]
            means.append(reshape(g.mean, (b, 1, g.mean.shape[-1])))
            variances.append(reshape(g.var, (b, 1, g.var.shape[-1])))
        return concat(means, axis=1), concat(variances, axis=1)


class GmvaeModel(Module):
    def __init__(self, config: GmvaeConfig, rng: Rng):
        c = config
        self.config = c
        enc_z_in = c.dim_x + (c.dim_h if c.conditional == "model_b" else 0)
        enc_w_in = c.dim_x + (c.dim_h if c.conditional == "model_a" else 0)
        prior_in = c.dim_w + (c.dim_h if c.conditional == "model_b" else 0)
        self.encoder_z = _EncoderNet(enc_z_in, c.dim_z, c, rng)
        self.encoder_w = _EncoderNet(enc_w_in, c.dim_w, c, rng)
        self.prior_z = _PriorNet(prior_in, c, rng)
        if c.conditional == "model_a":
            self.prior_w = _EncoderNet(c.dim_h, c.dim_w, c, rng)
        self.dec_trunk = MlpStack(c.dim_z, c.hidden_width, c.depth, rng, c.dropout_rate)
        self.dec_mean = Linear(self.dec_trunk.out_dim, c.dim_x, rng)

    # `config` is not a parameter; Module only scans Tensors/Modules, so it is skipped.

    def freeze(self) -> None:
        for p in self.params().values():
            p.requires_grad = False


def _as_batch(x) -> Tuple[Tensor, bool]:
    if isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(x, dtype=np.float32))
    if t.data.ndim == 1:
        return reshape(t, (1, t.data.shape[0])), True
    return t, False


def _check_h(m: GmvaeModel, h) -> Optional[Tensor]:
    if m.config.conditional == "none":
        if h is not None:
            raise ConfigError("unconditional model given a conditioning vector")
        return None
    if h is None:
        raise ConfigError(f"conditional={m.config.conditional} requires a conditioning vector")
    ht, _ = _as_batch(h)
    if ht.data.shape[-1] != m.config.dim_h:
        raise ConfigError(f"conditioning dim {ht.data.shape[-1]} != dim_h {m.config.dim_h}")
    return ht


def encode(m: GmvaeModel, x, h=None, rng: Optional[Rng] = None) -> Tuple[DiagGaussian, DiagGaussian]:
    """Posterior factors q(z|.) and q(w|.); dropout only when an rng is given."""
    xt, squeeze = _as_batch(x)
    if xt.data.shape[-1] != m.config.dim_x:
        raise ConfigError(f"input dim {xt.data.shape[-1]} != dim_x {m.config.dim_x}")
    ht = _check_h(m, h)
    z_in = concat([xt, ht], axis=-1) if m.config.conditional == "model_b" else xt
    w_in = concat([xt, ht], axis=-1) if m.config.conditional == "model_a" else xt
    qz = m.encoder_z(z_in, rng)
    qw = m.encoder_w(w_in, rng)
    if squeeze:
        qz = DiagGaussian(reshape(qz.mean, (m.config.dim_z,)), reshape(qz.var, (m.config.dim_z,)))
        qw = DiagGaussian(reshape(qw.mean, (m.config.dim_w,)), reshape(qw.var, (m.config.dim_w,)))
    return qz, qw


def prior_component(m: GmvaeModel, w, k: int, h=None) -> DiagGaussian:
    if not 0 <= k < m.config.K:
        raise IndexError(f"component {k} out of range for K={m.config.K}")
    wt, squeeze = _as_batch(w)
    ht = _check_h(m, h)
    p_in = concat([wt, ht], axis=-1) if m.config.conditional == "model_b" else wt
    g = m.prior_z.component(p_in, k)
    if squeeze:
        g = DiagGaussian(reshape(g.mean, (m.config.dim_z,)), reshape(g.var, (m.config.dim_z,)))
    return g


def _component_log_densities(m: GmvaeModel, z: Tensor, w: Tensor, h: Optional[Tensor], rng=None) -> Tensor:
    """log N(z; mu_k(w,h), Sigma_k(w,h)) for all k, shape (batch, K)."""
    p_in = concat([w, h], axis=-1) if m.config.conditional == "model_b" and h is not None else w
    means, variances = m.prior_z.all_components(p_in, rng)
    z_e = reshape(z, (z.data.shape[0], 1, z.data.shape[-1]))
    diff = sub(z_e, means)
    quad = div(mul(diff, diff), variances)
    return mul(tsum(add(add(log(variances), LOG_2PI), quad), axis=-1), -0.5)


def posterior_y(m: GmvaeModel, z, w, h=None) -> Categorical:
    """q(y|w,z): softmax over component log densities (uniform prior cancels)."""
    zt, squeeze = _as_batch(z)
    wt, _ = _as_batch(w)
    ht = _check_h(m, h)
    logdens = _component_log_densities(m, zt, wt, ht)
    probs = exp(log_softmax(logdens, axis=-1))
    if squeeze:
        probs = reshape(probs, (m.config.K,))
    return Categorical(probs)


def decode(m: GmvaeModel, z, rng: Optional[Rng] = None) -> DiagGaussian:
    zt, squeeze = _as_batch(z)
    if zt.data.shape[-1] != m.config.dim_z:
        raise ConfigError(f"latent dim {zt.data.shape[-1]} != dim_z {m.config.dim_z}")
    mean = m.dec_mean(m.dec_trunk(zt, rng))
    var = Tensor(np.full(mean.data.shape, m.config.sigma_dec**2, dtype=mean.data.dtype))
    if squeeze:
        mean = reshape(mean, (m.config.dim_x,))
        var = reshape(var, (m.config.dim_x,))
    return DiagGaussian(mean, var)


def elbo_graph(m: GmvaeModel, x: Tensor, h: Optional[Tensor], rng: Rng, train: bool = True):
    """Build the bound as a graph; returns (total, parts dict of scalar Tensors)."""
    c = m.config
    if c.sigma_dec <= 0:
        raise TrainingError("sigma_dec must be > 0 to evaluate the reconstruction term")
    drop_rng = rng if train else None
    xt, _ = _as_batch(x)
    ht = _check_h(m, h)
    b = xt.data.shape[0]

    z_in = concat([xt, ht], axis=-1) if c.conditional == "model_b" else xt
    w_in = concat([xt, ht], axis=-1) if c.conditional == "model_a" else xt
    qz = m.encoder_z(z_in, drop_rng)
    qw = m.encoder_w(w_in, drop_rng)
    z = reparam_sample(qz, rng)
    w = reparam_sample(qw, rng)

    # reconstruction: log p(x | z~q) under the fixed-variance decoder
    xmu = m.dec_mean(m.dec_trunk(z, drop_rng))
    sigma2 = c.sigma_dec**2
    sq = mul(sub(xt, xmu), sub(xt, xmu))
    rec = tmean(mul(tsum(add(sq * (1.0 / sigma2), LOG_2PI + math.log(sigma2)), axis=-1), -0.5))

    # analytic expectation over y, single sample over (z, w); the component
    # parameters are computed once and reused by q(y|w,z) and the KL term
    means, variances = _prior_all(m, w, ht, drop_rng)
    z_e = reshape(z, (b, 1, c.dim_z))
    zdiff = sub(z_e, means)
    logdens = mul(tsum(add(add(log(variances), LOG_2PI), div(mul(zdiff, zdiff), variances)), axis=-1), -0.5)
    log_qy = log_softmax(logdens, axis=-1)
    qy = exp(log_qy)

    qz_mean_e = reshape(qz.mean, (b, 1, c.dim_z))
    qz_var_e = reshape(qz.var, (b, 1, c.dim_z))
    dmean = sub(means, qz_mean_e)
    kl_per_comp = mul(
        tsum(
            add(
                add(div(qz_var_e, variances), div(mul(dmean, dmean), variances)),
                sub(sub(log(variances), log(qz_var_e)), 1.0),
            ),
            axis=-1,
        ),
        0.5,
    )
    kl_z = tmean(tsum(mul(qy, kl_per_comp), axis=-1))
    kl_y = tmean(tsum(mul(qy, add(log_qy, math.log(c.K))), axis=-1))

    if c.conditional == "model_a":
        pw = m.prior_w(ht, drop_rng)
        kl_w = tmean(kl_gaussians(qw, pw))
    else:
        kl_w = tmean(kl_standard_normal(qw))

    total = sub(sub(sub(rec, kl_z), kl_y), kl_w)
    return total, {"reconstruction": rec, "kl_z": kl_z, "kl_y": kl_y, "kl_w": kl_w}


def _prior_all(m: GmvaeModel, w: Tensor, ht: Optional[Tensor], rng=None):
    p_in = concat([w, ht], axis=-1) if m.config.conditional == "model_b" and ht is not None else w
    return m.prior_z.all_components(p_in, rng)


def _breakdown(parts: Dict[str, Tensor]) -> ElboBreakdown:
    vals = {}
    for name, t in parts.items():
        v = float(t.data)
        if not np.isfinite(v):
            raise TrainingError(f"non-finite ELBO term {name!r}")
        vals[name] = v
    total = vals["reconstruction"] - vals["kl_z"] - vals["kl_y"] - vals["kl_w"]
    return ElboBreakdown(total=total, **vals)


def elbo(m: GmvaeModel, x_batch, h_batch=None, rng: Optional[Rng] = None, train: bool = False) -> ElboBreakdown:
    if rng is None:
        rng = Rng(0)
    xt, _ = _as_batch(x_batch)
    if xt.data.shape[0] == 0:
        raise TrainingError("elbo of an empty batch")
    _, parts = elbo_graph(m, xt, h_batch, rng, train=train)
    return _breakdown(parts)


def reconstruct(m: GmvaeModel, x, h=None, rng: Optional[Rng] = None, mode: str = "sample") -> Tensor:
    """Project to z and reconstruct: the spliced layer's forward operation.

    mode="sample": z ~ q(z|x(,h)), output ~ N(mu_dec(z), sigma^2 I).
    mode="mean":   z = E q(z|.), output = mu_dec(z).  Dropout is always off.
    """
    if mode not in ("sample", "mean"):
        raise ConfigError(f"unknown reconstruct mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ConfigError("mode='sample' needs an rng")
    xt, squeeze = _as_batch(x)
    if xt.data.shape[-1] != m.config.dim_x:
        raise ConfigError(f"input dim {xt.data.shape[-1]} != dim_x {m.config.dim_x}")
    ht = _check_h(m, h)
    z_in = concat([xt, ht], axis=-1) if m.config.conditional == "model_b" else xt
    qz = m.encoder_z(z_in, None)
    z = reparam_sample(qz, rng) if mode == "sample" else qz.mean
    out = m.dec_mean(m.dec_trunk(z, None))
    if mode == "sample" and m.config.sigma_dec > 0:
        noise = rng.normal(out.data.shape).astype(out.data.dtype) * m.config.sigma_dec
        out = add(out, Tensor(noise))
    if squeeze:
        out = reshape(out, (m.config.dim_x,))
    return out


def train(dataset, cfg: GmvaeConfig, rng: Rng, curve_hook=None) -> Tuple[GmvaeModel, List[ElboBreakdown]]:
    """Fit by maximizing the bound with minibatch Adam.

    `dataset` is either a raw (N, dim_x) array or anything exposing
    .vectors (N, dim_x) and optionally .cond (N, dim_h).
    """
    vectors = np.asarray(getattr(dataset, "vectors", dataset), dtype=np.float32)
    cond = getattr(dataset, "cond", None)
    if cond is not None:
        cond = np.asarray(cond, dtype=np.float32)
        if cond.shape[0] != vectors.shape[0]:
            raise ConfigError("conditioning rows differ from data rows")
    if vectors.ndim != 2 or vectors.shape[1] != cfg.dim_x:
        raise ConfigError(f"dataset dim {vectors.shape} incompatible with dim_x={cfg.dim_x}")
    if cfg.conditional != "none" and cond is None:
        raise ConfigError("conditional training needs conditioning vectors")

    model = GmvaeModel(cfg, rng.spawn(0))
    opt = OptimizerState("adam", cfg.learning_rate)
    params = model.params()
    n = vectors.shape[0]
    history: List[ElboBreakdown] = []

    for epoch in range(cfg.epochs):
        order = rng.spawn(1000 + epoch).permutation(n)
        noise_rng = rng.spawn(2000 + epoch)
        sums = {"reconstruction": 0.0, "kl_z": 0.0, "kl_y": 0.0, "kl_w": 0.0}
        seen = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = Tensor(vectors[idx])
            hb = Tensor(cond[idx]) if cond is not None else None
            total, parts = elbo_graph(model, xb, hb, noise_rng, train=True)
            loss = neg(total)
            if not np.isfinite(float(loss.data)):
                bad = [k for k, t in parts.items() if not np.isfinite(float(t.data))]
                raise TrainingError(
                    f"diverged at epoch {epoch} batch {start // cfg.batch_size}: non-finite {bad or ['total']}"
                )
            loss.backward()
            optimizer_step(params, opt)
            for key, t in parts.items():
                sums[key] += float(t.data) * len(idx)
            seen += len(idx)
        avg = {k: v / seen for k, v in sums.items()}
        bd = ElboBreakdown(total=avg["reconstruction"] - avg["kl_z"] - avg["kl_y"] - avg["kl_w"], **avg)
        history.append(bd)
        if curve_hook is not None:
            curve_hook(epoch, bd)
    return model, history


def cond_pair_dataset(state_seqs: Sequence[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Consecutive (h=state_i, x=state_{i+1}) pairs per sequence; no pairs cross
    sequence boundaries and length-1 sequences contribute nothing."""
    hs, xs = [], []
    for seq in state_seqs:
        arr = np.asarray(seq, dtype=np.float32)
        if arr.ndim != 2:
            raise ConfigError("each sequence must be (steps, dim)")
        if arr.shape[0] < 2:
            continue
        hs.append(arr[:-1])
        xs.append(arr[1:])
    if not hs:
        return (np.zeros((0, 0), dtype=np.float32), np.zeros((0, 0), dtype=np.float32))
    return np.concatenate(hs, axis=0), np.concatenate(xs, axis=0)
