"""Pipeline driver: every stage is a subcommand over a JSON run config.

Stages write their artifacts under out_dir with deterministic names, so a
full experiment is a short shell script:

    dgmr prepare-data    --config runs/toy.json
    dgmr pretrain-host   --config runs/toy.json
    dgmr snapshot        --config runs/toy.json
    dgmr train-dgm       --config runs/toy.json
    dgmr splice-finetune --config runs/toy.json
    dgmr baseline-dropout --config runs/toy.json --rate 0.5
    dgmr evaluate        --config runs/toy.json --model spliced
    dgmr impute          --config runs/toy.json --topk 5

Configs parse strictly (unknown keys are errors); relative paths resolve
against the config file; `corpus_path: "builtin:toy"` names the bundled
corpus and `images: "synthetic"` generates the deterministic image set.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import experiments, gmvae
from .gmvae import GmvaeConfig, GmvaeModel
from .hosts.idx import normalize_images, read_idx, write_idx
from .hosts.mlp import MlpClassifier
from .hosts.seq2seq import Seq2seqAttention, Seq2seqConfig
from .hosts.transformer import TinyTransformerEncoder, TransformerConfig
from .metrics import MetricError
from .rng import Rng
from .splice import dropout_baseline, finetune_above, parse_site, snapshot_hidden, splice_layer
from .store import CurveLog, dump_hidden, load_archive, load_hidden, save_archive
from .textdata import MaskPolicy, MaskedCorpus, Vocab, load_corpus, mask_corpus, stopwords

META = "__meta__"


class CliError(RuntimeError):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _strict(cls, raw: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise CliError("config", f"unknown keys in {section!r}: {unknown}")
    return cls(**raw)


@dataclass
class DataConfig:
    corpus_path: str = ""
    min_freq: int = 1
    policy: str = "low"
    seed: int = 0
    test_fraction: float = 0.1
    images: str = ""
    labels: str = ""
    n_train: int = 12000
    n_val: int = 48000


@dataclass
class HostConfig:
    kind: str = "transformer"
    dim: int = 128
    heads: int = 4
    ffn_dim: int = 512
    layers: int = 4
    max_len: int = 64
    dropout_rate: float = 0.1
    tie_mlm_head: bool = False
    emb_dim: int = 64
    hidden: int = 128
    cell: str = "gru"
    use_attention: bool = True
    pretrain_policy: str = "medium"
    pretrain_epochs: int = 12
    pretrain_lr: float = 1e-3
    pretrain_batch_size: int = 64


@dataclass
class SpliceConfig:
    site: str = "transformer.layer.1.post_attention"
    noise_mode: str = "sample"


@dataclass
class TrainConfig:
    epochs: int = 6
    lr: float = 1e-3
    batch_size: int = 32


@dataclass
class RunConfig:
    data: DataConfig
    host: HostConfig
    dgm: GmvaeConfig
    splice: SpliceConfig
    train: TrainConfig
    out_dir: Path

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError("config", f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise CliError("config", f"invalid JSON in {path}: {e}") from None
        known = {"data", "host", "dgm", "splice", "train", "out_dir"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise CliError("config", f"unknown top-level keys: {unknown}")
        base = path.parent
        data = _strict(DataConfig, raw.get("data", {}), "data")
        host = _strict(HostConfig, raw.get("host", {}), "host")
        dgm_raw = dict(raw.get("dgm", {}))
        dgm_raw.setdefault("dim_x", 0)
        known_dgm = {f.name for f in fields(GmvaeConfig)}
        unknown = sorted(set(dgm_raw) - known_dgm)
        if unknown:
            raise CliError("config", f"unknown keys in 'dgm': {unknown}")
        splice = _strict(SpliceConfig, raw.get("splice", {}), "splice")
        train = _strict(TrainConfig, raw.get("train", {}), "train")
        out_dir = base / raw.get("out_dir", "runs/out")

        def respath(p: str) -> str:
            if not p or p.startswith("builtin:") or p == "synthetic":
                return p
            return str((base / p).resolve())

        corpus_label = data.corpus_path or data.images  # as written in the config
        data.corpus_path = respath(data.corpus_path)
        data.images = respath(data.images)
        data.labels = respath(data.labels)
        cfg = cls(data=data, host=host, dgm=None, splice=splice, train=train, out_dir=out_dir)
        cfg._dgm_raw = dgm_raw
        cfg.corpus_label = corpus_label
        return cfg

    def dgm_config(self, dim_x: int, dim_h: int = 0) -> GmvaeConfig:
        raw = dict(self._dgm_raw)
        if raw.get("dim_x", 0) == 0:
            raw["dim_x"] = dim_x
        if raw.get("conditional", "none") != "none" and raw.get("dim_h", 0) == 0:
            raw["dim_h"] = dim_h
        try:
            return GmvaeConfig(**raw)
        except (TypeError, gmvae.ConfigError) as e:
            raise CliError("config", f"bad dgm section: {e}") from None


# ---------------------------------------------------------------- artifact names

def artifact(cfg: RunConfig, name: str) -> Path:
    return cfg.out_dir / name


def site_slug(site_text: str) -> str:
    return site_text.replace(".", "_")


def need(path: Path, producer: str) -> Path:
    if not Path(path).exists():
        raise CliError("missing-artifact", f"{path} (run {producer} first)")
    return Path(path)


# ---------------------------------------------------------------- model checkpoints

def save_model(path, kind: str, config: dict, module) -> None:
    entries = {f"p/{name}": arr for name, arr in module.state().items()}
    blob = json.dumps({"kind": kind, "config": config}, sort_keys=True).encode("utf-8")
    entries[META] = np.frombuffer(blob, dtype=np.uint8).astype("<f4")
    save_archive(entries, path)


def load_model(path):
    entries = load_archive(path)
    if META not in entries:
        raise CliError("format", f"{path}: not a model checkpoint")
    meta = json.loads(entries[META].astype(np.uint8).tobytes().decode("utf-8"))
    params = {name[2:]: arr for name, arr in entries.items() if name.startswith("p/")}
    kind, config = meta["kind"], meta["config"]
    rng = Rng(0)
    if kind == "mlp":
        model = MlpClassifier(rng, in_dim=config["in_dim"], sizes=tuple(config["sizes"]))
    elif kind == "transformer":
        model = TinyTransformerEncoder(TransformerConfig(**config), rng)
    elif kind == "seq2seq":
        model = Seq2seqAttention(Seq2seqConfig(**config), rng)
    elif kind == "gmvae":
        model = GmvaeModel(GmvaeConfig(**config), rng)
    else:
        raise CliError("format", f"{path}: unknown model kind {kind!r}")
    model.load_state(params)
    return kind, config, model


def host_config_dict(cfg: RunConfig) -> dict:
    h = cfg.host
    if h.kind == "transformer":
        return {"vocab_size": 0, "dim": h.dim, "heads": h.heads, "ffn_dim": h.ffn_dim,
                "layers": h.layers, "max_len": h.max_len, "dropout_rate": h.dropout_rate,
                "tie_mlm_head": h.tie_mlm_head}
    if h.kind == "seq2seq":
        return {"vocab_size": 0, "emb_dim": h.emb_dim, "hidden": h.hidden, "max_len": h.max_len,
                "cell": h.cell, "use_attention": h.use_attention}
    return {"in_dim": 784, "sizes": list((700, 600, 512, 256, 128, 64, 32, 16, 10))}


# ---------------------------------------------------------------- corpus plumbing

def corpus_file(cfg: RunConfig) -> Path:
    p = cfg.data.corpus_path
    if p == "builtin:toy":
        return Path(str(resources.files("dgmr.assets").joinpath("toy_corpus.txt")))
    if not p:
        raise CliError("config", "data.corpus_path is required for text hosts")
    return Path(p)


def load_prepared_text(cfg: RunConfig):
    vocab = Vocab.load(need(artifact(cfg, "vocab.txt"), "prepare-data"))
    train_sents = [
        [int(t) for t in line.split()]
        for line in need(artifact(cfg, "corpus_train.ids"), "prepare-data").read_text().splitlines()
        if line
    ]
    policy = MaskPolicy(cfg.data.policy)
    test = MaskedCorpus.load(need(artifact(cfg, "masked_test.tsv"), "prepare-data"), policy, cfg.data.seed)
    return vocab, train_sents, test


def seq2seq_pairs(test_or_train_sents, policy, stop_ids, vocab, seed):
    corpus = mask_corpus(test_or_train_sents, policy, stop_ids, seed, vocab)
    return [(s.masked, s.original) for s in corpus.sentences]


# ---------------------------------------------------------------- subcommands

def cmd_prepare_data(cfg: RunConfig, args) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.host.kind == "mlp":
        seed = cfg.data.seed
        n = cfg.data.n_train + cfg.data.n_val
        if cfg.data.images == "synthetic":
            images, labels = experiments.synthetic_images(seed, n)
        else:
            images = read_idx(need(Path(cfg.data.images), "an images IDX file"))
            labels = read_idx(need(Path(cfg.data.labels), "a labels IDX file"))
            if images.shape[0] < n:
                raise CliError("config", f"need {n} images, file has {images.shape[0]}")
            images, labels = images[:n], labels[:n]
        write_idx(images[: cfg.data.n_train], artifact(cfg, "train_images.idx"))
        write_idx(labels[: cfg.data.n_train].astype(np.uint8), artifact(cfg, "train_labels.idx"))
        write_idx(images[cfg.data.n_train :], artifact(cfg, "val_images.idx"))
        write_idx(labels[cfg.data.n_train :].astype(np.uint8), artifact(cfg, "val_labels.idx"))
        print(f"prepared {cfg.data.n_train}/{cfg.data.n_val} train/val images under {cfg.out_dir}")
        return

    sents = load_corpus(corpus_file(cfg))
    vocab = Vocab.build(sents, min_freq=cfg.data.min_freq)
    vocab.save(artifact(cfg, "vocab.txt"))
    encoded = [vocab.encode(s) for s in sents]
    order = Rng(cfg.data.seed, stream=7).permutation(len(encoded))
    n_test = max(1, int(round(len(encoded) * cfg.data.test_fraction)))
    test_ids = [encoded[i] for i in order[:n_test]]
    train_ids = [encoded[i] for i in order[n_test:]]
    with open(artifact(cfg, "corpus_train.ids"), "w", encoding="utf-8") as f:
        for row in train_ids:
            f.write(" ".join(map(str, row)) + "\n")
    policy = MaskPolicy(cfg.data.policy)
    stop_ids = stopwords(vocab)
    test_corpus = mask_corpus(test_ids, policy, stop_ids, seed=cfg.data.seed, vocab=vocab)
    test_corpus.export(artifact(cfg, "masked_test.tsv"))
    print(f"vocab {len(vocab)} tokens; {len(train_ids)} train / {len(test_ids)} test sentences -> {cfg.out_dir}")


def cmd_pretrain_host(cfg: RunConfig, args) -> None:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed if args.seed is not None else cfg.data.seed
    epochs = args.epochs if args.epochs is not None else cfg.host.pretrain_epochs
    if cfg.host.kind == "mlp":
        x_tr = normalize_images(read_idx(need(artifact(cfg, "train_images.idx"), "prepare-data")))
        y_tr = read_idx(need(artifact(cfg, "train_labels.idx"), "prepare-data")).astype(np.int64)
        x_va = normalize_images(read_idx(need(artifact(cfg, "val_images.idx"), "prepare-data")))
        y_va = read_idx(need(artifact(cfg, "val_labels.idx"), "prepare-data")).astype(np.int64)
        host = MlpClassifier(Rng(seed))
        with CurveLog(artifact(cfg, "host_curves.csv")) as log:
            def hook(epoch, tr, va):
                log.append(epoch, "train", "ce", tr)
                log.append(epoch, "val", "ce", va)

            curves, best_epoch, best_state = experiments.pretrain_mlp(
                host, x_tr, y_tr, x_va, y_va, epochs, Rng(seed, stream=1),
                lr=cfg.train.lr, batch_size=cfg.train.batch_size, curve_hook=hook)
        save_model(artifact(cfg, "host.dgmr"), "mlp", host_config_dict(cfg), host)
        host.load_state(best_state)
        save_model(artifact(cfg, "host_best.dgmr"), "mlp", host_config_dict(cfg), host)
        print(f"pretrained mlp for {epochs} epochs; best val at epoch {best_epoch}")
        return

    vocab, train_sents, _ = load_prepared_text(cfg)
    stop_ids = stopwords(vocab)
    hconf = host_config_dict(cfg)
    hconf["vocab_size"] = len(vocab)
    if cfg.host.kind == "transformer":
        host = TinyTransformerEncoder(TransformerConfig(**hconf), Rng(seed))
        with CurveLog(artifact(cfg, "host_curves.csv")) as log:
            def hook(epoch, tr, va):
                log.append(epoch, "train", "ce", tr)
                log.append(epoch, "val", "ce", va)

            experiments.pretrain_mlm(
                host, train_sents, MaskPolicy(cfg.host.pretrain_policy), stop_ids, vocab,
                epochs, Rng(seed, stream=11), lr=cfg.host.pretrain_lr,
                batch_size=cfg.host.pretrain_batch_size, curve_hook=hook)
    else:
        host = Seq2seqAttention(Seq2seqConfig(**hconf), Rng(seed))
        pairs = seq2seq_pairs(train_sents, MaskPolicy(cfg.data.policy), stop_ids, vocab, cfg.data.seed + 17)
        with CurveLog(artifact(cfg, "host_curves.csv")) as log:
            def hook(epoch, tr, va):
                log.append(epoch, "train", "ce", tr)
                log.append(epoch, "val", "ce", va)

            experiments.pretrain_seq2seq(host, pairs, epochs, Rng(seed, stream=11),
                                         lr=cfg.host.pretrain_lr,
                                         batch_size=cfg.host.pretrain_batch_size, curve_hook=hook)
    save_model(artifact(cfg, "host.dgmr"), cfg.host.kind, hconf, host)
    print(f"pretrained {cfg.host.kind} for {epochs} epochs -> {artifact(cfg, 'host.dgmr')}")


def _snapshot_inputs(cfg: RunConfig, site, host):
    if cfg.host.kind == "mlp":
        x_tr = normalize_images(read_idx(need(artifact(cfg, "train_images.idx"), "prepare-data")))
        return (x_tr, None)
    vocab, train_sents, _ = load_prepared_text(cfg)
    stop_ids = stopwords(vocab)
    policy = MaskPolicy(cfg.data.policy)
    if cfg.host.kind == "transformer":
        snap = mask_corpus(train_sents, policy, stop_ids, seed=cfg.data.seed + 2, vocab=vocab)
        return experiments.transformer_snapshot_batches(train_sents, snap)
    pairs = seq2seq_pairs(train_sents, policy, stop_ids, vocab, cfg.data.seed + 17)
    return experiments.seq2seq_snapshot_batches(pairs)


def cmd_snapshot(cfg: RunConfig, args) -> None:
    site_text = args.site or cfg.splice.site
    site = parse_site(site_text)
    host_path = "host_best.dgmr" if cfg.host.kind == "mlp" else "host.dgmr"
    _, _, host = load_model(need(artifact(cfg, host_path), "pretrain-host"))
    data = _snapshot_inputs(cfg, site, host)
    ds = snapshot_hidden(host, site, data, limit=None,
                         meta={"host_checkpoint": host_path, "corpus": cfg.corpus_label})
    out = artifact(cfg, f"hidden_{site_slug(site_text)}.dgmr")
    dump_hidden(ds, out)
    print(f"snapshot {ds.meta['count']} vectors of dim {ds.meta['dim']} -> {out}")


def cmd_train_dgm(cfg: RunConfig, args) -> None:
    site_text = args.site or cfg.splice.site
    ds = load_hidden(need(artifact(cfg, f"hidden_{site_slug(site_text)}.dgmr"), "snapshot"))
    dim_h = ds.cond.shape[1] if ds.cond is not None else 0
    dcfg = cfg.dgm_config(ds.meta["dim"], dim_h)
    seed = args.seed if args.seed is not None else cfg.data.seed
    with CurveLog(artifact(cfg, "dgm_curves.csv")) as log:
        def hook(epoch, bd):
            log.append(epoch, "train", "total", bd.total)
            log.append(epoch, "train", "reconstruction", bd.reconstruction)
            log.append(epoch, "train", "kl_z", bd.kl_z)
            log.append(epoch, "train", "kl_y", bd.kl_y)
            log.append(epoch, "train", "kl_w", bd.kl_w)

        model, _ = gmvae.train(ds, dcfg, Rng(seed, stream=21), curve_hook=hook)
    out = artifact(cfg, f"dgm_{site_slug(site_text)}.dgmr")
    save_model(out, "gmvae", json.loads(dcfg.to_json()), model)
    print(f"trained gmvae ({dcfg.epochs} epochs) -> {out}")


def _finetune_data(cfg: RunConfig):
    if cfg.host.kind == "mlp":
        x_tr = normalize_images(read_idx(need(artifact(cfg, "train_images.idx"), "prepare-data")))
        y_tr = read_idx(need(artifact(cfg, "train_labels.idx"), "prepare-data")).astype(np.int64)
        x_va = normalize_images(read_idx(need(artifact(cfg, "val_images.idx"), "prepare-data")))
        y_va = read_idx(need(artifact(cfg, "val_labels.idx"), "prepare-data")).astype(np.int64)
        return (x_tr, y_tr), (x_va, y_va)
    vocab, train_sents, _ = load_prepared_text(cfg)
    stop_ids = stopwords(vocab)
    if cfg.host.kind == "transformer":
        data = {"sentences": train_sents, "policy": MaskPolicy(cfg.data.policy),
                "stop_ids": stop_ids, "vocab": vocab, "mask_seed": cfg.data.seed + 3}
        return data, None
    pairs = seq2seq_pairs(train_sents, MaskPolicy(cfg.data.policy), stop_ids, vocab, cfg.data.seed + 17)
    return {"pairs": pairs}, None


def cmd_splice_finetune(cfg: RunConfig, args) -> None:
    site_text = args.site or cfg.splice.site
    site = parse_site(site_text)
    host_path = "host_best.dgmr" if cfg.host.kind == "mlp" else "host.dgmr"
    _, hconf, host = load_model(need(artifact(cfg, host_path), "pretrain-host"))
    _, _, dgm = load_model(need(artifact(cfg, f"dgm_{site_slug(site_text)}.dgmr"), "train-dgm"))
    spliced = splice_layer(host, site, dgm, noise_mode=cfg.splice.noise_mode)
    data, val_data = _finetune_data(cfg)
    seed = args.seed if args.seed is not None else cfg.data.seed
    epochs = args.epochs if args.epochs is not None else cfg.train.epochs
    with CurveLog(artifact(cfg, "finetune_curves.csv")) as log:
        def hook(epoch, tr, va):
            log.append(epoch, "train", "ce", tr)
            log.append(epoch, "val", "ce", va)

        finetune_above(spliced, data, epochs, Rng(seed, stream=13), lr=cfg.train.lr,
                       batch_size=cfg.train.batch_size, val_data=val_data, curve_hook=hook)
    out = artifact(cfg, f"spliced_{site_slug(site_text)}.dgmr")
    save_model(out, cfg.host.kind, hconf, host)
    print(f"fine-tuned above {site_text} for {epochs} epochs -> {out}")


def cmd_baseline_dropout(cfg: RunConfig, args) -> None:
    site_text = args.site or cfg.splice.site
    site = parse_site(site_text)
    rate = args.rate
    if rate is None:
        raise CliError("config", "--rate is required for baseline-dropout")
    host_path = "host_best.dgmr" if cfg.host.kind == "mlp" else "host.dgmr"
    _, hconf, host = load_model(need(artifact(cfg, host_path), "pretrain-host"))
    data, val_data = _finetune_data(cfg)
    seed = args.seed if args.seed is not None else cfg.data.seed
    epochs = args.epochs if args.epochs is not None else cfg.train.epochs
    tag = f"{rate}".replace(".", "p")
    with CurveLog(artifact(cfg, f"dropout_curves_{tag}.csv")) as log:
        def hook(epoch, tr, va):
            log.append(epoch, "train", "ce", tr)
            log.append(epoch, "val", "ce", va)

        try:
            dropout_baseline(host, site, rate, data, epochs, Rng(seed, stream=13),
                             lr=cfg.train.lr, batch_size=cfg.train.batch_size,
                             val_data=val_data, curve_hook=hook)
        except Exception as e:
            raise CliError("train", str(e)) from None
    out = artifact(cfg, f"dropout_{tag}.dgmr")
    save_model(out, cfg.host.kind, hconf, host)
    print(f"dropout baseline rate {rate} for {epochs} epochs -> {out}")


def _load_eval_model(cfg: RunConfig, which: str, site_text: str):
    if which == "baseline":
        host_path = "host_best.dgmr" if cfg.host.kind == "mlp" else "host.dgmr"
        _, _, model = load_model(need(artifact(cfg, host_path), "pretrain-host"))
        return model
    if which == "spliced":
        _, _, host = load_model(need(artifact(cfg, f"spliced_{site_slug(site_text)}.dgmr"), "splice-finetune"))
        _, _, dgm = load_model(need(artifact(cfg, f"dgm_{site_slug(site_text)}.dgmr"), "train-dgm"))
        return splice_layer(host, parse_site(site_text), dgm, noise_mode=cfg.splice.noise_mode)
    raise CliError("config", f"unknown model choice {which!r}")


def cmd_evaluate(cfg: RunConfig, args) -> None:
    site_text = args.site or cfg.splice.site
    vocab, _, test = load_prepared_text(cfg)
    if cfg.host.kind == "mlp":
        raise CliError("config", "evaluate applies to text hosts; see host_curves.csv for the mlp")
    which = args.model or "spliced"
    model = _load_eval_model(cfg, which, site_text)
    if cfg.host.kind == "transformer":
        n_masked = sum(len(s.positions) for s in test.sentences)
        if n_masked == 0:
            raise CliError("undefined-metric", "masked corpus has zero masked positions; masked_bleu undefined")
        ev = experiments.evaluate_transformer(model, test, rng=Rng(cfg.data.seed, stream=14), entropy_passes=args.entropy_passes)
        report = ev.report
        extra = {"masked_accuracy": ev.masked_accuracy, "mean_masked_entropy": ev.mean_masked_entropy}
    else:
        pairs = [(s.masked, s.original) for s in test.sentences]
        res = experiments.evaluate_seq2seq(model, pairs, rng=Rng(cfg.data.seed, stream=14))
        from .metrics import EvalReport

        report = EvalReport(
            token_accuracy=res["aligned_accuracy"] if res["aligned_accuracy"] is not None else 0.0,
            bleu=res["bleu"], masked_bleu=None,
            counts={"sentences": len(pairs), "tokens": sum(len(p[1]) for p in pairs),
                    "masked_tokens": sum(len(s.positions) for s in test.sentences)},
        )
        extra = {"aligned_fraction": res["aligned_fraction"]}
    tag = which
    artifact(cfg, f"eval_report_{tag}.json").write_text(report.to_json(), encoding="utf-8")
    artifact(cfg, f"eval_report_{tag}.tsv").write_text(report.to_tsv(), encoding="utf-8")
    if extra:
        artifact(cfg, f"eval_extra_{tag}.json").write_text(
            json.dumps(extra, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    print(report.to_tsv().splitlines()[1])


def write_impute_report(vocab: Vocab, test: MaskedCorpus, base_hyps, splice_hyps, path,
                        topk_lists=None) -> None:
    """Three aligned lines per sentence: source with *masked* words, then each
    model's output with [mismatching] tokens bracketed."""

    def render(tokens, marks, wrap):
        out = []
        for i, t in enumerate(tokens):
            w = vocab.id_to_token[t]
            out.append(wrap.format(w) if i in marks else w)
        return " ".join(out)

    lines = []
    for i, sent in enumerate(test.sentences):
        ref = sent.original
        base = base_hyps[i]
        spl = splice_hyps[i]
        base_miss = {j for j in range(len(base)) if j >= len(ref) or base[j] != ref[j]}
        spl_miss = {j for j in range(len(spl)) if j >= len(ref) or spl[j] != ref[j]}
        lines.append(f"# sentence {i}")
        lines.append("SRC : " + render(ref, sent.positions, "*{}*"))
        lines.append("BASE: " + render(base, base_miss, "[{}]"))
        lines.append("SPLC: " + render(spl, spl_miss, "[{}]"))
        if topk_lists is not None and topk_lists[i]:
            for pos in sorted(topk_lists[i]):
                words = " ".join(vocab.id_to_token[t] for t in topk_lists[i][pos])
                lines.append(f"TOP{len(topk_lists[i][pos])}@{pos}: {words}")
        lines.append("")
    Path(path).write_text("\n".join(lines), encoding="utf-8")


def cmd_impute(cfg: RunConfig, args) -> None:
    site_text = args.site or cfg.splice.site
    vocab, _, test = load_prepared_text(cfg)
    if cfg.host.kind != "transformer":
        raise CliError("config", "the impute report compares transformer hosts; use evaluate for seq2seq")
    baseline = _load_eval_model(cfg, "baseline", site_text)
    spliced = _load_eval_model(cfg, "spliced", site_text)
    base_ev = experiments.evaluate_transformer(baseline, test)
    spl_ev = experiments.evaluate_transformer(spliced, test, rng=Rng(cfg.data.seed, stream=14))
    topk_lists = None
    if args.topk:
        from .hosts.transformer import impute as t_impute
        from .textdata import pad_batch

        topk_lists = []
        for start in range(0, len(test.sentences), 128):
            chunk = test.sentences[start : start + 128]
            ids, amask = pad_batch([s.masked for s in chunk])
            _, cands = t_impute(spliced.host, ids, amask, [s.positions for s in chunk],
                                taps=spliced.taps(None, train=False), topk=args.topk)
            topk_lists.extend(cands)
    out = artifact(cfg, "impute_report.txt")
    write_impute_report(vocab, test, base_ev.hypotheses, spl_ev.hypotheses, out, topk_lists)
    print(f"wrote {len(test.sentences)} records -> {out}")


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "pretrain-host": cmd_pretrain_host,
    "snapshot": cmd_snapshot,
    "train-dgm": cmd_train_dgm,
    "splice-finetune": cmd_splice_finetune,
    "baseline-dropout": cmd_baseline_dropout,
    "evaluate": cmd_evaluate,
    "impute": cmd_impute,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dgmr", description="GMVAE stochastic-layer pipeline")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--site", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--policy", default=None)
        p.add_argument("--topk", type=int, default=0)
        p.add_argument("--rate", type=float, default=None)
        p.add_argument("--model", default=None, choices=[None, "baseline", "spliced"])
        p.add_argument("--entropy-passes", type=int, default=8, dest="entropy_passes")
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig.load(args.config)
        if args.policy:
            cfg.data.policy = args.policy
        if args.seed is not None:
            cfg.data.seed = args.seed
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, args)
    except CliError as e:
        print(f"error: {e.category}: {e}", file=sys.stderr)
        return 1
    except MetricError as e:
        print(f"error: undefined-metric: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
