import numpy as np
import pytest

from dgmr.gmvae import GmvaeConfig, GmvaeModel
from dgmr.hosts.mlp import MlpClassifier, nll_loss
from dgmr.hosts.seq2seq import Seq2seqAttention, Seq2seqConfig, ce_loss
from dgmr.hosts.transformer import TinyTransformerEncoder, TransformerConfig, mlm_loss
from dgmr.rng import Rng
from dgmr.splice import (
    HiddenStateDataset,
    IdentityDgm,
    SpliceError,
    SpliceSite,
    dropout_baseline,
    dropout_splice,
    finetune_above,
    parse_site,
    site_dim,
    snapshot_hidden,
    splice_layer,
)
from dgmr.tensor import Tensor
from dgmr.textdata import MaskPolicy, pad_batch


def small_mlp(seed=0):
    return MlpClassifier(Rng(seed), in_dim=20, sizes=(16, 12, 10, 5))


def small_transformer(seed=0, layers=2):
    cfg = TransformerConfig(vocab_size=30, dim=12, heads=2, ffn_dim=20, layers=layers, max_len=12, dropout_rate=0.0)
    return TinyTransformerEncoder(cfg, Rng(seed))


def small_seq2seq(seed=0):
    return Seq2seqAttention(Seq2seqConfig(vocab_size=30, emb_dim=8, hidden=10, max_len=12), Rng(seed))


def dgm_for(host, site, seed=1, **kw):
    dim = site_dim(host, site)
    conditional = {"gmvae": "none", "cgmvae_a": "model_a", "cgmvae_b": "model_b"}[site.dgm_variant]
    dim_h = dim if site.location == "decoder_hidden" else 0
    cfg = GmvaeConfig(dim_x=dim, dim_z=4, dim_w=2, K=2, hidden_width=8, depth=1,
                      sigma_dec=0.1, conditional=conditional, dim_h=dim_h, **kw)
    return GmvaeModel(cfg, Rng(seed))


# ---------------------------------------------------------------- site parsing

def test_parse_site_grammar():
    assert parse_site("mlp.after.1").location == "after.1"
    assert parse_site("transformer.top").key == "transformer.top"
    s = parse_site("transformer.layer.2.post_attention")
    assert s.location == "layer.2.post_attention" and s.dgm_variant == "gmvae"
    assert parse_site("seq2seq.context").dgm_variant == "gmvae"
    assert parse_site("seq2seq.decoder_hidden").dgm_variant == "cgmvae_b"


def test_parse_site_rejects_junk():
    for bad in ("mlp.after", "transformer.layer.x.post_attention", "seq2seq.middle", "cnn.top"):
        with pytest.raises(SpliceError):
            parse_site(bad)


def test_site_variant_invariants():
    with pytest.raises(SpliceError):
        SpliceSite("seq2seq", "decoder_hidden", "gmvae")
    with pytest.raises(SpliceError):
        SpliceSite("transformer", "top", "cgmvae_b")


def test_splice_layer_validates_dims_and_variant():
    host = small_mlp()
    site = parse_site("mlp.after.1")
    bad = GmvaeModel(GmvaeConfig(dim_x=7, dim_z=2, dim_w=1, K=1, sigma_dec=0.1), Rng(0))
    with pytest.raises(SpliceError, match="dim"):
        splice_layer(host, site, bad)
    cond = GmvaeModel(GmvaeConfig(dim_x=16, dim_z=2, dim_w=1, K=1, sigma_dec=0.1,
                                  conditional="model_b", dim_h=3), Rng(0))
    with pytest.raises(SpliceError, match="conditional"):
        splice_layer(host, site, cond)


# ---------------------------------------------------------------- snapshot

def test_snapshot_transformer_counts_exclude_padding():
    host = small_transformer()
    sents = [[5, 6, 7, 8], [9, 10, 11, 12], [13, 14, 15, 16]]
    ids, mask = pad_batch(sents + [[5, 6]])  # add a short one to force padding
    ds = snapshot_hidden(host, parse_site("transformer.top"), [(ids, mask)])
    assert ds.vectors.shape == (14, 12)  # 3*4 + 2 real tokens
    assert ds.meta["count"] == 14 and ds.meta["dim"] == 12


def test_snapshot_transformer_threaded_matches_sequential(monkeypatch):
    host = small_transformer(seed=3)
    batches = []
    root = Rng(4)
    for i in range(4):
        sents = [[int(t) for t in root.integers(5, 30, int(root.integers(2, 6)))] for _ in range(3)]
        batches.append(pad_batch(sents))
    site = parse_site("transformer.layer.1.post_attention")
    seq = snapshot_hidden(host, site, batches)
    monkeypatch.setenv("DGMR_THREADS", "2")
    par = snapshot_hidden(host, site, batches)
    np.testing.assert_array_equal(seq.vectors, par.vectors)


def test_snapshot_seq2seq_encoder_output_per_sentence():
    host = small_seq2seq()
    src_ids, src_mask = pad_batch([[5, 6, 7], [8, 9], [10, 11, 12]])
    dec_in, dec_mask = pad_batch([[3, 5], [3, 8], [3, 10]])
    ds = snapshot_hidden(host, parse_site("seq2seq.encoder_output"), [(src_ids, src_mask, dec_in, dec_mask)])
    assert ds.vectors.shape == (3, 10)


def test_snapshot_seq2seq_decoder_hidden_pairs():
    host = small_seq2seq()
    src_ids, src_mask = pad_batch([[5, 6, 7], [8, 9]])
    dec_in, dec_mask = pad_batch([[3, 5, 6, 7], [3, 8]])  # 4 and 2 real steps
    ds = snapshot_hidden(host, parse_site("seq2seq.decoder_hidden"), [(src_ids, src_mask, dec_in, dec_mask)])
    # pairs: 3 from the 4-step sentence, 1 from the 2-step one
    assert ds.vectors.shape == (4, 10)
    assert ds.cond.shape == (4, 10)


def test_snapshot_mlp_limit():
    host = small_mlp()
    x = Rng(5).normal((40, 20)).astype(np.float32)
    ds = snapshot_hidden(host, parse_site("mlp.after.2"), (x, None), limit=25)
    assert ds.vectors.shape == (25, 12)


def test_snapshot_roundtrip_through_store(tmp_path):
    from dgmr.store import dump_hidden, load_hidden

    host = small_mlp()
    x = Rng(6).normal((10, 20)).astype(np.float32)
    ds = snapshot_hidden(host, parse_site("mlp.after.1"), (x, None), meta={"corpus": "toy", "host_checkpoint": "h"})
    p = tmp_path / "hs.dgmr"
    dump_hidden(ds, p)
    again = load_hidden(p)
    np.testing.assert_array_equal(again.vectors, ds.vectors)
    assert again.meta["corpus"] == "toy"


# ---------------------------------------------------------------- identity splice

def test_identity_splice_mlp_bit_exact():
    host = small_mlp(seed=7)
    site = parse_site("mlp.after.1")
    spliced = SplicedHostForTest(host, site)
    x = Tensor(Rng(8).normal((6, 20)).astype(np.float32))
    base = host.forward(x).data
    out = spliced.forward(x, rng=Rng(1), train=True).data
    np.testing.assert_array_equal(base, out)


class SplicedHostForTest:
    def __init__(self, host, site):
        from dgmr.splice import SplicedHost

        self.inner = SplicedHost(host, site, dgm=IdentityDgm(site_dim(host, site)))

    def forward(self, *a, **kw):
        return self.inner.forward(*a, **kw)


@pytest.mark.parametrize("site_text", ["transformer.top", "transformer.layer.1.post_attention", "transformer.layer.2.post_attention"])
def test_identity_splice_transformer_bit_exact(site_text):
    host = small_transformer(seed=9)
    site = parse_site(site_text)
    from dgmr.splice import SplicedHost

    spliced = SplicedHost(host, site, dgm=IdentityDgm(site_dim(host, site)))
    ids, mask = pad_batch([[5, 6, 7, 8], [9, 10]])
    base = host.forward(ids, mask).data
    out = spliced.forward(ids, mask, rng=Rng(2), train=True).data
    np.testing.assert_array_equal(base, out)


@pytest.mark.parametrize("site_text", ["seq2seq.encoder_output", "seq2seq.context", "seq2seq.decoder_hidden"])
def test_identity_splice_seq2seq_bit_exact(site_text):
    host = small_seq2seq(seed=10)
    site = parse_site(site_text)
    from dgmr.splice import SplicedHost

    dim = site_dim(host, site)
    stub = IdentityDgm(dim, conditional="model_b" if site.location == "decoder_hidden" else "none",
                       dim_h=dim if site.location == "decoder_hidden" else 0)
    spliced = SplicedHost(host, site, dgm=stub)
    src_ids, src_mask = pad_batch([[5, 6, 7], [8, 9]])
    dec_in, _ = pad_batch([[3, 5, 6], [3, 8]])
    base = host.forward(src_ids, src_mask, dec_in).data
    out = spliced.forward(src_ids, src_mask, dec_in, rng=Rng(3), train=True).data
    np.testing.assert_array_equal(base, out)


# ---------------------------------------------------------------- freeze audit

def collect_grad_norms(model):
    return {n: (0.0 if p.grad is None else float(np.abs(p.grad).sum())) for n, p in model.params().items()}


def test_freeze_audit_mlp():
    host = small_mlp(seed=11)
    site = parse_site("mlp.after.2")
    dgm = dgm_for(host, site)
    spliced = splice_layer(host, site, dgm)
    x = Tensor(Rng(12).normal((4, 20)).astype(np.float32))
    loss = nll_loss(spliced.forward(x, rng=Rng(13)), np.array([0, 1, 2, 3]))
    loss.backward()
    norms = collect_grad_norms(host)
    for name in spliced.freeze_boundary:
        assert norms[name] == 0.0, name
    assert any(v > 0 for n, v in norms.items() if n not in spliced.freeze_boundary)
    for name, p in dgm.params().items():
        assert p.grad is None, name


@pytest.mark.parametrize("site_text", ["transformer.top", "transformer.layer.1.post_attention", "transformer.layer.2.post_attention"])
def test_freeze_audit_transformer(site_text):
    host = small_transformer(seed=14)
    site = parse_site(site_text)
    spliced = splice_layer(host, site, dgm_for(host, site))
    ids, mask = pad_batch([[5, 6, 7, 8]])
    targets = ids.copy()
    lmask = np.zeros_like(mask)
    lmask[0, 1] = 1
    loss = mlm_loss(spliced.forward(ids, mask, rng=Rng(15)), targets, lmask)
    loss.backward()
    norms = collect_grad_norms(host)
    for name in spliced.freeze_boundary:
        assert norms[name] == 0.0, name
    trainable_hit = [n for n, v in norms.items() if n not in spliced.freeze_boundary and v > 0]
    assert trainable_hit


@pytest.mark.parametrize("site_text", ["seq2seq.encoder_output", "seq2seq.context", "seq2seq.decoder_hidden"])
def test_freeze_audit_seq2seq(site_text):
    host = small_seq2seq(seed=16)
    site = parse_site(site_text)
    spliced = splice_layer(host, site, dgm_for(host, site))
    src_ids, src_mask = pad_batch([[5, 6, 7]])
    dec_in, tmask = pad_batch([[3, 5, 6]])
    targets, _ = pad_batch([[5, 6, 4]])
    loss = ce_loss(spliced.forward(src_ids, src_mask, dec_in, rng=Rng(17)), targets, tmask)
    loss.backward()
    norms = collect_grad_norms(host)
    for name in spliced.freeze_boundary:
        assert norms[name] == 0.0, name
    assert any(v > 0 for n, v in norms.items() if n not in spliced.freeze_boundary)


# ---------------------------------------------------------------- noise locality

def test_noise_locality_transformer():
    host = small_transformer(seed=18)
    site = parse_site("transformer.layer.1.post_attention")
    dgm = dgm_for(host, site)
    spliced = splice_layer(host, site, dgm, noise_mode="sample")
    ids, mask = pad_batch([[5, 6, 7, 8]])

    below, tapped = [], []

    def recording_tap(t):
        below.append(t.data.copy())
        out = spliced._dgm_tap(rng_holder["rng"], "sample")(t)
        tapped.append(out.data.copy())
        return out

    rng_holder = {}
    outs = []
    for seed in (100, 101):
        rng_holder["rng"] = Rng(seed)
        out = host.forward(ids, mask, taps={"layer.1.post_attention": recording_tap})
        outs.append(out.data.copy())
    np.testing.assert_array_equal(below[0], below[1])  # identical below the site
    assert not np.array_equal(tapped[0], tapped[1])  # differs at the site
    assert not np.array_equal(outs[0], outs[1])  # and above it


def test_mean_mode_deterministic_forward():
    host = small_transformer(seed=19)
    site = parse_site("transformer.top")
    spliced = splice_layer(host, site, dgm_for(host, site), noise_mode="mean")
    ids, mask = pad_batch([[5, 6, 7]])
    a = spliced.forward(ids, mask, rng=None, train=False).data
    b = spliced.forward(ids, mask, rng=None, train=False).data
    np.testing.assert_array_equal(a, b)


# ---------------------------------------------------------------- fine-tuning

def mlp_data(seed=20, n=60):
    rng = Rng(seed)
    x = rng.normal((n, 20)).astype(np.float32)
    y = rng.integers(0, 5, n)
    return x, y


def test_finetune_zero_epochs_no_change():
    host = small_mlp(seed=21)
    site = parse_site("mlp.after.1")
    spliced = splice_layer(host, site, dgm_for(host, site))
    before = {n: p.data.copy() for n, p in host.params().items()}
    curves = finetune_above(spliced, mlp_data(), epochs=0, rng=Rng(22))
    assert curves == {"train": [], "val": []}
    for n, p in host.params().items():
        np.testing.assert_array_equal(before[n], p.data)


def test_finetune_freezes_below_and_dgm():
    host = small_mlp(seed=23)
    site = parse_site("mlp.after.2")
    dgm = dgm_for(host, site)
    spliced = splice_layer(host, site, dgm)
    frozen_before = spliced.frozen_checksum()
    dgm_before = {n: p.data.copy() for n, p in dgm.params().items()}
    curves = finetune_above(spliced, mlp_data(), epochs=3, rng=Rng(24), batch_size=16)
    assert len(curves["train"]) == 3 and len(curves["val"]) == 3
    assert spliced.frozen_checksum() == frozen_before
    for n, p in dgm.params().items():
        np.testing.assert_array_equal(dgm_before[n], p.data)


def test_finetune_transformer_and_seq2seq_run():
    from dgmr.textdata import Vocab, stopwords

    sents_tokens = [["a", "dog", "runs", "fast"], ["a", "cat", "sleeps", "now"],
                    ["the", "dog", "sleeps", "here"], ["the", "cat", "runs", "away"]] * 3
    vocab = Vocab.build(sents_tokens)
    sentences = [vocab.encode(s) for s in sents_tokens]
    stop_ids = stopwords(vocab)

    host = TinyTransformerEncoder(
        TransformerConfig(vocab_size=len(vocab), dim=12, heads=2, ffn_dim=20, layers=1, max_len=8, dropout_rate=0.0),
        Rng(25),
    )
    site = parse_site("transformer.layer.1.post_attention")
    spliced = splice_layer(host, site, dgm_for(host, site, epochs=1))
    data = {"sentences": sentences, "policy": MaskPolicy("medium"), "stop_ids": stop_ids,
            "vocab": vocab, "mask_seed": 5}
    curves = finetune_above(spliced, data, epochs=2, rng=Rng(26), batch_size=4)
    assert len(curves["train"]) == 2

    s2s = small_seq2seq(seed=27)
    site2 = parse_site("seq2seq.context")
    spliced2 = splice_layer(s2s, site2, dgm_for(s2s, site2))
    pairs = [(s[:3], s) for s in sentences]
    curves2 = finetune_above(spliced2, {"pairs": pairs}, epochs=2, rng=Rng(28), batch_size=4)
    assert len(curves2["val"]) == 2


def test_dropout_baseline_rate_zero_matches_plain_finetune():
    data = mlp_data(seed=30)

    def run(arm_rate=None):
        host = small_mlp(seed=31)
        site = parse_site("mlp.after.1")
        if arm_rate is None:
            spliced = splice_layer(host, site, IdentityDgmWrapper(site_dim(host, site)))
        else:
            spliced = dropout_splice(host, site, arm_rate)
        curves = finetune_above(spliced, data, epochs=3, rng=Rng(32), batch_size=16)
        return curves, {n: p.data.copy() for n, p in host.params().items()}

    curves_zero, params_zero = run(arm_rate=0.0)
    curves_id, params_id = run(arm_rate=None)
    assert curves_zero == curves_id
    for n in params_zero:
        np.testing.assert_array_equal(params_zero[n], params_id[n])


class IdentityDgmWrapper(IdentityDgm):
    pass


def test_dropout_baseline_api():
    host = small_mlp(seed=33)
    site = parse_site("mlp.after.1")
    arm, curves = dropout_baseline(host, site, 0.5, mlp_data(seed=34), epochs=2, rng=Rng(35), batch_size=16)
    assert arm.kind == "dropout"
    assert len(curves["train"]) == 2
    with pytest.raises(SpliceError):
        dropout_splice(small_mlp(), site, 1.0)


# ---------------------------------------------------------------- closure property

ALL_SITES = [
    "mlp.after.1",
    "mlp.after.2",
    "transformer.top",
    "transformer.layer.1.post_attention",
    "transformer.layer.2.post_attention",
    "seq2seq.encoder_output",
    "seq2seq.decoder_hidden",
    "seq2seq.context",
]


@pytest.mark.parametrize("site_text", ALL_SITES)
def test_snapshot_train_splice_closure(site_text):
    """Any site's snapshot can train a DGM that splices back without dimension errors."""
    from dgmr.gmvae import train as train_dgm

    site = parse_site(site_text)
    if site.host_kind == "mlp":
        host = small_mlp(seed=40)
        data = (Rng(41).normal((30, 20)).astype(np.float32), None)
        forward_args = (Tensor(Rng(42).normal((3, 20)).astype(np.float32)),)
    elif site.host_kind == "transformer":
        host = small_transformer(seed=43)
        ids, mask = pad_batch([[5, 6, 7, 8], [9, 10, 11]])
        data = [(ids, mask)]
        forward_args = (ids, mask)
    else:
        host = small_seq2seq(seed=44)
        src_ids, src_mask = pad_batch([[5, 6, 7], [8, 9, 10]])
        dec_in, dec_mask = pad_batch([[3, 5, 6], [3, 8, 9]])
        data = [(src_ids, src_mask, dec_in, dec_mask)]
        forward_args = (src_ids, src_mask, dec_in)

    ds = snapshot_hidden(host, site, data)
    conditional = {"gmvae": "none", "cgmvae_a": "model_a", "cgmvae_b": "model_b"}[site.dgm_variant]
    cfg = GmvaeConfig(dim_x=ds.meta["dim"], dim_z=3, dim_w=2, K=2, hidden_width=8, depth=1,
                      sigma_dec=0.1, learning_rate=1e-3, epochs=2, batch_size=8,
                      conditional=conditional, dim_h=ds.meta["dim"] if conditional != "none" else 0)
    dgm, _ = train_dgm(ds, cfg, Rng(45))
    spliced = splice_layer(host, site, dgm)
    out = spliced.forward(*forward_args, rng=Rng(46), train=True)
    assert np.all(np.isfinite(out.data))
