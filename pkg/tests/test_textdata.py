import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgmr.rng import Rng
from dgmr.textdata import (
    MASK,
    N_RESERVED,
    UNK,
    CorpusError,
    MaskPolicy,
    Vocab,
    apply_policy,
    load_corpus,
    mask_corpus,
    stopword_tokens,
    stopwords,
)


@pytest.fixture
def vocab():
    sents = [
        "the quick brown fox jumps over the lazy dog".split(),
        "a man in a red shirt is walking in the park .".split(),
        "the telescope points at a bright star .".split(),
    ]
    return Vocab.build(sents)


# ---------------------------------------------------------------- vocab

def test_build_vocab_counts_and_reserved():
    v = Vocab.build([["a", "a", "b"]])
    assert len(v) == N_RESERVED + 2
    assert v.token_to_id["a"] == N_RESERVED  # most frequent first
    assert v.id_to_token[:5] == ["[PAD]", "[UNK]", "[MASK]", "[BOS]", "[EOS]"]


def test_min_freq_maps_to_unk():
    v = Vocab.build([["a", "a", "b"]], min_freq=2)
    assert "b" not in v.token_to_id
    assert v.encode(["b"]) == [UNK]


def test_vocab_deterministic():
    sents = [["z", "m", "a", "m"], ["z", "z"]]
    assert Vocab.build(sents).token_to_id == Vocab.build(sents).token_to_id


def test_vocab_empty_corpus_rejected():
    with pytest.raises(CorpusError):
        Vocab.build([])


def test_vocab_roundtrip_through_file(tmp_path, vocab):
    p = tmp_path / "vocab.txt"
    vocab.save(p)
    again = Vocab.load(p)
    assert again.token_to_id == vocab.token_to_id


def test_encode_decode_roundtrip(vocab):
    sent = "the quick fox".split()
    assert vocab.decode(vocab.encode(sent)) == sent


# ---------------------------------------------------------------- corpus io

def test_load_corpus_basic(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("A Dog .\n\nthe CAT sat\n", encoding="utf-8")
    sents = load_corpus(p)
    assert sents == [["a", "dog", "."], ["the", "cat", "sat"]]


def test_load_corpus_crlf_equivalent(tmp_path):
    a = tmp_path / "a.txt"
    b = tmp_path / "b.txt"
    a.write_bytes(b"one two\nthree four\n")
    b.write_bytes(b"one two\r\nthree four\r\n")
    assert load_corpus(a) == load_corpus(b)


def test_load_corpus_missing_file(tmp_path):
    with pytest.raises(CorpusError):
        load_corpus(tmp_path / "nope.txt")


def test_load_corpus_invalid_utf8(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_bytes(b"\xff\xfe junk")
    with pytest.raises(CorpusError):
        load_corpus(p)


# ---------------------------------------------------------------- stopwords

def test_stopword_list_fixed():
    toks = stopword_tokens()
    assert "the" in toks
    assert "telescope" not in toks
    assert len(toks) == 179
    assert toks == stopword_tokens()


def test_stopword_ids_through_vocab(vocab):
    ids = stopwords(vocab)
    assert vocab.token_to_id["the"] in ids
    assert vocab.token_to_id["telescope"] not in ids


# ---------------------------------------------------------------- policies

def test_medium_forced_full_mask(vocab):
    class AllSmall:
        def uniform(self, shape=()):
            return np.zeros(shape)

    ids = vocab.encode("the quick brown fox".split())
    masked, pos = apply_policy(ids, MaskPolicy("medium"), stopwords(vocab), AllSmall(), vocab)
    assert pos == {0, 1, 2, 3}
    assert masked == [MASK] * 4


def test_low_all_stopwords_no_mask(vocab):
    ids = vocab.encode("the a in is over".split())
    masked, pos = apply_policy(ids, MaskPolicy("low", sentence_rate=1.0), stopwords(vocab), Rng(5), vocab)
    assert pos == set()
    assert masked == ids


def test_low_never_masks_stopwords_or_punct(vocab):
    stop = stopwords(vocab)
    ids = vocab.encode("the quick fox . is lazy".split())
    for seed in range(200):
        _, pos = apply_policy(ids, MaskPolicy("low", sentence_rate=1.0), stop, Rng(seed), vocab)
        for p in pos:
            tok = vocab.id_to_token[ids[p]]
            assert ids[p] not in stop and tok != "."


def test_medium_empirical_rate(vocab):
    stop = stopwords(vocab)
    ids = vocab.encode(["fox"] * 20)
    total = masked_count = 0
    root = Rng(99)
    for i in range(500):
        _, pos = apply_policy(ids, MaskPolicy("medium"), stop, root.spawn(i), vocab)
        masked_count += len(pos)
        total += len(ids)
    rate = masked_count / total
    assert 0.38 <= rate <= 0.42


def test_low_sentence_rate_and_at_least_one(vocab):
    stop = stopwords(vocab)
    ids = vocab.encode("the quick brown fox".split())
    selected = 0
    n = 10_000
    root = Rng(123)
    for i in range(n):
        _, pos = apply_policy(ids, MaskPolicy("low"), stop, root.spawn(i), vocab)
        if pos:
            selected += 1
            assert len(pos) == 1
    assert abs(selected / n - 0.40) <= 0.02


def test_disrupted_replacements_never_match_original(vocab):
    stop = stopwords(vocab)
    ids = vocab.encode("a quick brown fox jumps".split())
    root = Rng(7)
    seen_positions = False
    for i in range(300):
        masked, pos = apply_policy(ids, MaskPolicy("disrupted", sentence_rate=1.0), stop, root.spawn(i), vocab)
        for p in pos:
            seen_positions = True
            assert masked[p] != ids[p]
            assert masked[p] >= N_RESERVED  # never a reserved id
        for j in range(len(ids)):
            if j not in pos:
                assert masked[j] == ids[j]
    assert seen_positions


def test_multi30k_a_masks_up_to_three_nonstopwords(vocab):
    stop = stopwords(vocab)
    ids = vocab.encode("quick brown fox jumps dog park bright star".split())
    counts = []
    root = Rng(17)
    for i in range(2000):
        _, pos = apply_policy(ids, MaskPolicy("multi30k_a"), stop, root.spawn(i), vocab)
        if pos:
            counts.append(len(pos))
    assert set(counts) <= {1, 2, 3}
    # sentence selection 0.8, cascades 0.8 each
    frac_selected = len(counts) / 2000
    assert abs(frac_selected - 0.8) < 0.03
    frac_three = sum(1 for c in counts if c == 3) / len(counts)
    assert abs(frac_three - 0.64) < 0.05


def test_policy_determinism(vocab):
    stop = stopwords(vocab)
    enc = [vocab.encode(s.split()) for s in ["a quick fox .", "the dog jumps over a star"]]
    a = mask_corpus(enc, MaskPolicy("low"), stop, seed=5, vocab=vocab)
    b = mask_corpus(enc, MaskPolicy("low"), stop, seed=5, vocab=vocab)
    for sa, sb in zip(a.sentences, b.sentences):
        assert sa.masked == sb.masked and sa.positions == sb.positions


def test_masked_corpus_export_roundtrip(tmp_path, vocab):
    from dgmr.textdata import MaskedCorpus

    stop = stopwords(vocab)
    enc = [vocab.encode(s.split()) for s in ["a quick fox", "the dog jumps"]]
    mc = mask_corpus(enc, MaskPolicy("medium"), stop, seed=3, vocab=vocab)
    p = tmp_path / "masked.tsv"
    mc.export(p)
    again = MaskedCorpus.load(p, mc.policy, 3)
    for x, y in zip(mc.sentences, again.sentences):
        assert x.original == y.original and x.masked == y.masked and x.positions == y.positions


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_masked_differs_exactly_at_positions(seed):
    sents = [
        "a man walks a tall dog in the park".split(),
        "the bright star shines over a quiet town".split(),
    ]
    v = Vocab.build(sents)
    stop = stopwords(v)
    kind = ("low", "medium", "high", "multi30k_a", "multi30k_b", "disrupted")[seed % 6]
    enc = [v.encode(s) for s in sents]
    mc = mask_corpus(enc, MaskPolicy(kind), stop, seed=seed, vocab=v)
    for s in mc.sentences:
        for i, (o, m) in enumerate(zip(s.original, s.masked)):
            if i in s.positions:
                assert m != o or kind != "disrupted"
                if kind != "disrupted":
                    assert m == MASK
            else:
                assert m == o
