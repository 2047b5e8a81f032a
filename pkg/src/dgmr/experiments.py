"""End-to-end experiment drivers shared by scripts/ and the acceptance suite.

Three pipelines:
  * MLP regularization shape: pretrain an unregularized classifier until it
    overfits, then resume its best-validation checkpoint three times — dropout
    0.1 / dropout 0.5 / GMVAE splice — and compare the loss trajectories.
  * Transformer MLM: pretrain, snapshot a site, train the GMVAE, splice, and
    fine-tune against a fully fine-tuned baseline; evaluate imputation.
  * Seq2seq imputation with attention options (recurrent-state C-GMVAE and
    context-vector GMVAE).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from . import gmvae
from .gmvae import GmvaeConfig, GmvaeModel
from .hosts.mlp import MlpClassifier, nll_loss
from .hosts.seq2seq import Seq2seqAttention, Seq2seqConfig, ce_loss
from .hosts.transformer import TinyTransformerEncoder, TransformerConfig, impute, mlm_loss
from .metrics import EvalReport, bleu, masked_bleu, token_accuracy
from .optim import OptimizerState, optimizer_step
from .rng import Rng
from .splice import (
    SpliceSite,
    SplicedHost,
    dropout_baseline,
    finetune_above,
    make_batcher,
    parse_site,
    site_dim,
    snapshot_hidden,
    splice_layer,
)
from .tensor import Tensor
from .textdata import MaskPolicy, MaskedCorpus, MaskedSentence, Vocab, mask_corpus, pad_batch, stopwords


# ---------------------------------------------------------------- synthetic images

def synthetic_images(
    seed: int,
    n: int,
    class_strength: float = 0.5,
    noise_sigma: float = 45.0,
    ambiguous_frac: float = 0.1,
    ambiguous_min_weight: float = 0.5,
    ambiguous_max_weight: float = 0.8,
) -> Tuple[np.ndarray, np.ndarray]:
    """10-class 28x28 u8 images with a dialed-in irreducible error.

    Most samples carry their class component cleanly, so fitting the training
    set is genuinely easy (this is what lets the dropout arms drive training
    loss toward zero, as with real image data). A small `ambiguous_frac`
    blends in a random distractor class at weight close to one half: once the
    classifier starts sharpening its logits, its confidently wrong answers on
    those samples send the validation cross entropy climbing after its
    minimum, while the strong per-sample pixel noise gives the training set
    unique fingerprints to memorize — the overfitting shape the
    regularization experiment needs.
    """
    rng = Rng(seed)

    def smooth(coarse):
        up = np.kron(coarse, np.ones((4, 4)))
        return (up + np.roll(up, 1, 0) + np.roll(up, 1, 1) + np.roll(up, -1, 0) + np.roll(up, -1, 1)) / 5.0

    base = smooth(rng.uniform((7, 7)) * 255.0)
    comps = np.stack([smooth((rng.uniform((7, 7)) - 0.5) * 255.0) for _ in range(10)])

    labels = rng.integers(0, 10, n)
    distract = (labels + rng.integers(1, 10, n)) % 10
    weights = np.ones(n)
    ambiguous = rng.uniform(n) < ambiguous_frac
    span = ambiguous_max_weight - ambiguous_min_weight
    weights[ambiguous] = ambiguous_min_weight + span * rng.uniform(int(ambiguous.sum()))
    brightness = 0.8 + 0.4 * rng.uniform(n)
    noise = rng.normal((n, 28, 28)) * noise_sigma
    shifts = rng.integers(-2, 3, (n, 2))
    images = np.empty((n, 28, 28), dtype=np.uint8)
    for i in range(n):
        comp = weights[i] * comps[labels[i]] + (1.0 - weights[i]) * comps[distract[i]]
        img = (base + class_strength * comp) * brightness[i]
        img = np.roll(img, (int(shifts[i, 0]), int(shifts[i, 1])), axis=(0, 1))
        images[i] = np.clip(img + noise[i], 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


# ---------------------------------------------------------------- mlp experiment

@dataclass
class MlpExperimentResult:
    pretrain: Dict[str, List[float]]
    best_epoch: int
    arms: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)
    dgm_history: list = field(default_factory=list)


def _eval_mlp(host: MlpClassifier, x: np.ndarray, y: np.ndarray, batch: int = 4096,
              spliced: Optional[SplicedHost] = None) -> float:
    total = 0.0
    for s in range(0, x.shape[0], batch):
        xb = Tensor(x[s : s + batch])
        if spliced is not None:
            lp = spliced.forward(xb, rng=None, train=False)
        else:
            lp = host.forward(xb)
        total += float(nll_loss(lp, y[s : s + batch]).data) * xb.data.shape[0]
    return total / x.shape[0]


def pretrain_mlp(
    host: MlpClassifier,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    epochs: int,
    rng: Rng,
    lr: float = 0.01,
    batch_size: int = 128,
    curve_hook=None,
) -> Tuple[Dict[str, List[float]], int, Dict[str, np.ndarray]]:
    """SGD training with per-epoch train/val loss; returns curves, the epoch of
    minimum validation loss, and that epoch's parameter snapshot."""
    params = host.params()
    opt = OptimizerState("sgd", lr)
    curves = {"train": [], "val": []}
    best = (math.inf, -1, None)
    n = x_train.shape[0]
    for epoch in range(epochs):
        order = rng.spawn(epoch + 1).permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            sel = order[s : s + batch_size]
            loss = nll_loss(host.forward(Tensor(x_train[sel])), y_train[sel])
            total += float(loss.data) * len(sel)
            loss.backward()
            optimizer_step(params, opt)
        train_loss = total / n
        val_loss = _eval_mlp(host, x_val, y_val)
        curves["train"].append(train_loss)
        curves["val"].append(val_loss)
        if curve_hook is not None:
            curve_hook(epoch, train_loss, val_loss)
        if val_loss < best[0]:
            best = (val_loss, epoch, host.state())
    return curves, best[1], best[2]


def run_mlp_regularization(
    seed: int = 0,
    n_train: int = 12000,
    n_val: int = 48000,
    pretrain_epochs: int = 90,
    finetune_epochs: int = 210,
    batch_size: int = 64,
    lr: float = 0.01,
    site_text: str = "mlp.after.1",
    dgm_cfg: Optional[GmvaeConfig] = None,
    dropout_rates: Sequence[float] = (0.1, 0.5),
    progress=None,
) -> MlpExperimentResult:
    from .hosts.idx import normalize_images

    images, labels = synthetic_images(seed, n_train + n_val)
    x = normalize_images(images)
    x_train, y_train = x[:n_train], labels[:n_train]
    x_val, y_val = x[n_train:], labels[n_train:]

    host = MlpClassifier(Rng(seed))
    curves, best_epoch, best_state = pretrain_mlp(
        host, x_train, y_train, x_val, y_val, pretrain_epochs, Rng(seed, stream=1),
        lr=lr, batch_size=batch_size, curve_hook=progress,
    )
    result = MlpExperimentResult(pretrain=curves, best_epoch=best_epoch)
    site = parse_site(site_text)

    # GMVAE over the site's hidden vectors of the pre-overfit checkpoint
    host.load_state(best_state)
    snapshot = snapshot_hidden(host, site, (x_train, y_train), meta={"corpus": "synthetic"})
    if dgm_cfg is None:
        dgm_cfg = GmvaeConfig(
            dim_x=snapshot.meta["dim"], dim_z=16, dim_w=4, K=10, hidden_width=256, depth=2,
            sigma_dec=0.3, dropout_rate=0.0, learning_rate=1e-3, epochs=60, batch_size=256,
        )
    dgm, history = gmvae.train(snapshot, dgm_cfg, Rng(seed, stream=2))
    result.dgm_history = history

    for rate in dropout_rates:
        arm_host = MlpClassifier(Rng(seed))
        arm_host.load_state(best_state)
        _, arm_curves = dropout_baseline(
            arm_host, site, rate, (x_train, y_train), finetune_epochs, Rng(seed, stream=3),
            lr=lr, batch_size=batch_size, val_data=(x_val, y_val),
        )
        result.arms[f"dropout_{rate}"] = arm_curves

    gm_host = MlpClassifier(Rng(seed))
    gm_host.load_state(best_state)
    spliced = splice_layer(gm_host, site, dgm, noise_mode="sample")
    gm_curves = finetune_above(
        spliced, (x_train, y_train), finetune_epochs, Rng(seed, stream=3),
        lr=lr, batch_size=batch_size, val_data=(x_val, y_val),
    )
    result.arms["gmvae"] = gm_curves
    return result


# ---------------------------------------------------------------- transformer pipeline

def pretrain_mlm(
    host: TinyTransformerEncoder,
    sentences: Sequence[Sequence[int]],
    policy: MaskPolicy,
    stop_ids: Set[int],
    vocab: Vocab,
    epochs: int,
    rng: Rng,
    lr: float = 1e-3,
    batch_size: int = 32,
    curve_hook=None,
) -> Dict[str, List[float]]:
    """Full-parameter MLM training with per-epoch dynamic re-masking."""
    data = {"sentences": list(sentences), "policy": policy, "stop_ids": stop_ids,
            "vocab": vocab, "mask_seed": rng.seed}
    batches_of = make_batcher("transformer", data, 0.1, rng.seed)
    params = host.params()
    opt = OptimizerState("adam", lr)
    curves = {"train": [], "val": []}
    for epoch in range(epochs):
        noise = rng.spawn(500 + epoch)
        total = count = 0
        for (ids, amask), (targets, lmask), w in batches_of("train", epoch, batch_size):
            loss = mlm_loss(host.forward(ids, amask, rng=noise), targets, lmask)
            total += float(loss.data) * w
            count += w
            loss.backward()
            optimizer_step(params, opt)
        vtotal = vcount = 0
        for (ids, amask), (targets, lmask), w in batches_of("val", epoch, 256):
            vtotal += float(mlm_loss(host.forward(ids, amask), targets, lmask).data) * w
            vcount += w
        curves["train"].append(total / max(count, 1))
        curves["val"].append(vtotal / max(vcount, 1))
        if curve_hook is not None:
            curve_hook(epoch, curves["train"][-1], curves["val"][-1])
    return curves


def finetune_plain_mlm(host, sentences, policy, stop_ids, vocab, epochs, rng, lr=1e-3, batch_size=32):
    """Baseline arm: the whole host fine-tuned, no splice, same batching."""
    return pretrain_mlm(host, sentences, policy, stop_ids, vocab, epochs, rng, lr=lr, batch_size=batch_size)


def transformer_snapshot_batches(sentences: Sequence[Sequence[int]], masked: MaskedCorpus, batch_size: int = 64):
    """Padded batches of the policy-masked sentences (deployment distribution)."""
    out = []
    rows = [s.masked for s in masked.sentences]
    for start in range(0, len(rows), batch_size):
        out.append(pad_batch(rows[start : start + batch_size]))
    return out


@dataclass
class MlmEvaluation:
    report: EvalReport
    masked_accuracy: float
    mean_masked_entropy: float
    hypotheses: List[List[int]]


def evaluate_transformer(
    model,
    test_corpus: MaskedCorpus,
    rng: Optional[Rng] = None,
    entropy_passes: int = 1,
    batch_size: int = 128,
) -> MlmEvaluation:
    """Impute the masked test corpus and score it.

    `model` is a plain host or a SplicedHost. Imputation always runs the
    deterministic path (mean-mode reconstruction for a splice). The reported
    entropy is that of the model's marginal predictive distribution at each
    masked position: for a sample-mode splice the per-pass probabilities are
    averaged over `entropy_passes` stochastic forwards before taking the
    entropy, so between-pass diversity counts; a deterministic model's
    marginal is its single forward.
    """
    is_spliced = isinstance(model, SplicedHost)
    stochastic = is_spliced and model.noise_mode == "sample"
    refs, hyps, positions = [], [], []
    ent_sum, ent_count = 0.0, 0
    sents = test_corpus.sentences
    for start in range(0, len(sents), batch_size):
        chunk = sents[start : start + batch_size]
        ids, amask = pad_batch([s.masked for s in chunk])
        if is_spliced:
            det = model.forward(ids, amask, rng=None, train=False)
        else:
            det = model.forward(ids, amask)
        if stochastic:
            logits_passes = [
                model.forward(ids, amask, rng=rng.spawn(1000 * start + p), train=True).data
                for p in range(max(1, entropy_passes))
            ]
        else:
            logits_passes = [det.data]
        logits = det.data
        for row, sent in enumerate(chunk):
            hyp = list(sent.masked)
            for pos in sent.positions:
                hyp[pos] = int(np.argmax(logits[row, pos]))
            refs.append(list(sent.original))
            hyps.append(hyp)
            positions.append(set(sent.positions))
            for pos in sent.positions:
                marginal = None
                for arr in logits_passes:
                    z = arr[row, pos] - arr[row, pos].max()
                    prob = np.exp(z)
                    prob /= prob.sum()
                    marginal = prob if marginal is None else marginal + prob
                marginal /= len(logits_passes)
                ent_sum += float(-(marginal * np.log(np.maximum(marginal, 1e-12))).sum())
                ent_count += 1

    acc = token_accuracy(refs, hyps)
    score = bleu(refs, hyps)
    n_masked = sum(len(p) for p in positions)
    mb = masked_bleu(refs, hyps, positions) if n_masked else None
    masked_refs = [[r[i] for i in sorted(p)] for r, p in zip(refs, positions) if p]
    masked_hyps = [[h[i] for i in sorted(p)] for h, p in zip(hyps, positions) if p]
    macc = token_accuracy(masked_refs, masked_hyps) if masked_refs else 100.0
    report = EvalReport(
        token_accuracy=acc, bleu=score, masked_bleu=mb,
        counts={"sentences": len(refs), "tokens": sum(len(r) for r in refs), "masked_tokens": n_masked},
    )
    return MlmEvaluation(report=report, masked_accuracy=macc,
                         mean_masked_entropy=ent_sum / max(ent_count, 1), hypotheses=hyps)


@dataclass
class TransformerExperimentResult:
    baseline: MlmEvaluation
    spliced: Dict[str, MlmEvaluation] = field(default_factory=dict)
    curves: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)


def run_transformer_experiment(
    sentences: Sequence[Sequence[int]],
    vocab: Vocab,
    seed: int = 0,
    pretrain_epochs: int = 30,
    finetune_epochs: int = 6,
    eval_policy: Optional[MaskPolicy] = None,
    pretrain_policy: Optional[MaskPolicy] = None,
    host_cfg: Optional[TransformerConfig] = None,
    dgm_cfg: Optional[GmvaeConfig] = None,
    sites: Sequence[str] = ("transformer.layer.1.post_attention", "transformer.top"),
    test_fraction: float = 0.1,
    snapshot_limit: int = 50_000,
    entropy_passes: int = 8,
    progress=None,
) -> TransformerExperimentResult:
    stop_ids = stopwords(vocab)
    eval_policy = eval_policy or MaskPolicy("low")
    pretrain_policy = pretrain_policy or MaskPolicy("medium")

    order = Rng(seed, stream=7).permutation(len(sentences))
    n_test = max(1, int(round(len(sentences) * test_fraction)))
    test_ids = [sentences[i] for i in order[:n_test]]
    train_ids = [sentences[i] for i in order[n_test:]]
    test_corpus = mask_corpus(test_ids, eval_policy, stop_ids, seed=seed + 1, vocab=vocab)

    host_cfg = host_cfg or TransformerConfig(vocab_size=len(vocab))
    base = TinyTransformerEncoder(host_cfg, Rng(seed))
    pre_curves = pretrain_mlm(base, train_ids, pretrain_policy, stop_ids, vocab,
                              pretrain_epochs, Rng(seed, stream=11), curve_hook=progress)
    pretrained_state = base.state()
    result = TransformerExperimentResult(baseline=None)
    result.curves["pretrain"] = pre_curves

    # baseline: full fine-tune on the eval policy, same budget as the arms
    baseline = TinyTransformerEncoder(host_cfg, Rng(seed))
    baseline.load_state(pretrained_state)
    result.curves["baseline"] = finetune_plain_mlm(
        baseline, train_ids, eval_policy, stop_ids, vocab, finetune_epochs, Rng(seed, stream=12))
    result.baseline = evaluate_transformer(baseline, test_corpus)

    # shared snapshot inputs: the eval-policy masked training sentences
    snap_corpus = mask_corpus(train_ids, eval_policy, stop_ids, seed=seed + 2, vocab=vocab)

    for site_text in sites:
        site = parse_site(site_text)
        snap_host = TinyTransformerEncoder(host_cfg, Rng(seed))
        snap_host.load_state(pretrained_state)
        batches = transformer_snapshot_batches(train_ids, snap_corpus)
        ds = snapshot_hidden(snap_host, site, batches, limit=snapshot_limit, meta={"corpus": "toy"})
        cfg = dgm_cfg or GmvaeConfig(
            dim_x=ds.meta["dim"], dim_z=32, dim_w=8, K=10, hidden_width=128, depth=2,
            sigma_dec=0.2, dropout_rate=0.1, learning_rate=1e-3, epochs=30, batch_size=256,
        )
        dgm, _ = gmvae.train(ds, cfg, Rng(seed, stream=21))

        arm = TinyTransformerEncoder(host_cfg, Rng(seed))
        arm.load_state(pretrained_state)
        spliced = splice_layer(arm, site, dgm, noise_mode="sample")
        data = {"sentences": train_ids, "policy": eval_policy, "stop_ids": stop_ids,
                "vocab": vocab, "mask_seed": seed + 3}
        result.curves[site_text] = finetune_above(
            spliced, data, finetune_epochs, Rng(seed, stream=13), batch_size=32)
        result.spliced[site_text] = evaluate_transformer(
            spliced, test_corpus, rng=Rng(seed, stream=14), entropy_passes=entropy_passes)
    return result


# ---------------------------------------------------------------- seq2seq pipeline

def pretrain_seq2seq(
    host: Seq2seqAttention,
    pairs: Sequence[Tuple[Sequence[int], Sequence[int]]],
    epochs: int,
    rng: Rng,
    lr: float = 1e-3,
    batch_size: int = 32,
    curve_hook=None,
) -> Dict[str, List[float]]:
    data = {"pairs": list(pairs), "bos_id": host.cfg.bos_id, "eos_id": host.cfg.eos_id}
    batches_of = make_batcher("seq2seq", data, 0.1, rng.seed)
    params = host.params()
    opt = OptimizerState("adam", lr)
    curves = {"train": [], "val": []}
    for epoch in range(epochs):
        total = count = 0
        for (src, smask, dec_in), (targets, tmask), w in batches_of("train", epoch, batch_size):
            loss = ce_loss(host.forward(src, smask, dec_in), targets, tmask)
            total += float(loss.data) * w
            count += w
            loss.backward()
            optimizer_step(params, opt)
        vtotal = vcount = 0
        for (src, smask, dec_in), (targets, tmask), w in batches_of("val", epoch, 128):
            vtotal += float(ce_loss(host.forward(src, smask, dec_in), targets, tmask).data) * w
            vcount += w
        curves["train"].append(total / max(count, 1))
        curves["val"].append(vtotal / max(vcount, 1))
        if curve_hook is not None:
            curve_hook(epoch, curves["train"][-1], curves["val"][-1])
    return curves


def seq2seq_snapshot_batches(pairs, bos_id=3, batch_size: int = 64):
    out = []
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        src_ids, src_mask = pad_batch([p[0] for p in chunk])
        dec_in, dec_mask = pad_batch([[bos_id] + list(p[1]) for p in chunk])
        out.append((src_ids, src_mask, dec_in, dec_mask))
    return out


def evaluate_seq2seq(model, test_pairs, rng: Optional[Rng] = None, batch_size: int = 64):
    """Free-decode the masked sources; BLEU against the originals. Token accuracy
    and Masked BLEU are only defined on the aligned subset (equal lengths);
    they are reported over it and omitted when it is empty."""
    taps = None
    host = model
    if isinstance(model, SplicedHost):
        host = model.host
        taps_factory = lambda: model.taps(rng, train=model.noise_mode == "sample")
    refs, hyps = [], []
    for start in range(0, len(test_pairs), batch_size):
        chunk = test_pairs[start : start + batch_size]
        src_ids, src_mask = pad_batch([p[0] for p in chunk])
        taps = taps_factory() if isinstance(model, SplicedHost) else None
        outs = host.greedy_decode(src_ids, src_mask, taps=taps)
        refs.extend([list(p[1]) for p in chunk])
        hyps.extend(outs)
    score = bleu(refs, hyps)
    aligned = [(r, h) for r, h in zip(refs, hyps) if len(r) == len(h)]
    acc = token_accuracy([r for r, _ in aligned], [h for _, h in aligned]) if aligned else None
    return {"bleu": score, "aligned_accuracy": acc, "aligned_fraction": len(aligned) / max(len(refs), 1),
            "hypotheses": hyps}
