import math
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgmr.metrics import EvalReport, MetricError, bleu, masked_bleu, token_accuracy
from dgmr.rng import Rng


# ---------------------------------------------------------------- token accuracy

def test_identical_corpora_100():
    c = [["a", "b"], ["c"]]
    assert token_accuracy(c, c) == 100.0


def test_one_of_five_differs():
    assert token_accuracy([["a", "b", "c", "d", "e"]], [["a", "b", "x", "d", "e"]]) == 80.0


def test_accuracy_matches_counting_oracle():
    rng = Rng(31)
    refs, hyps = [], []
    for _ in range(20):
        n = int(rng.integers(1, 12))
        refs.append([int(t) for t in rng.integers(0, 5, n)])
        hyps.append([int(t) for t in rng.integers(0, 5, n)])
    matches = sum(1 for r, h in zip(refs, hyps) for a, b in zip(r, h) if a == b)
    total = sum(len(r) for r in refs)
    assert token_accuracy(refs, hyps) == 100.0 * matches / total


def test_length_mismatch_names_pair():
    with pytest.raises(MetricError, match="pair 1"):
        token_accuracy([["a"], ["b", "c"]], [["a"], ["b"]])


def test_corruption_never_increases_accuracy():
    rng = Rng(77)
    ref = [[int(t) for t in rng.integers(0, 4, 10)]]
    hyp = [list(ref[0])]
    prev = token_accuracy(ref, hyp)
    for pos in range(10):
        hyp[0][pos] = (hyp[0][pos] + 1) % 4 + 10  # guaranteed mismatch
        cur = token_accuracy(ref, hyp)
        assert cur <= prev
        prev = cur


# ---------------------------------------------------------------- bleu

REFS = [["the", "cat", "sat", "on", "the", "mat"], ["a", "quick", "brown", "fox"]]
HYPS = [["the", "cat", "sat", "on", "mat"], ["a", "quick", "red", "fox"]]
# hand-computed before implementation: p=(8/9, 4/7, 2/5, 1/3), BP=exp(-1/9)
HAND_BLEU = 45.64908731965718


def test_bleu_perfect_is_exactly_100():
    assert bleu(REFS, REFS) == 100.0


def test_bleu_disjoint_vocab_is_epsilon():
    score = bleu([["a", "b", "c", "d", "e"]], [["v", "w", "x", "y", "z"]])
    assert 0.0 <= score < 1e-6


def test_bleu_matches_hand_computation():
    assert abs(bleu(REFS, HYPS) - HAND_BLEU) < 1e-6


def test_bleu_permutation_invariant():
    a = bleu(REFS, HYPS)
    b = bleu(REFS[::-1], HYPS[::-1])
    assert abs(a - b) < 1e-12


def test_bleu_short_sentences_still_exact_100():
    short = [["hi", "there"], ["ok"]]
    assert bleu(short, short) == 100.0


def test_bleu_empty_hypotheses_rejected():
    with pytest.raises(MetricError):
        bleu([["a"]], [[]])


# ---------------------------------------------------------------- masked bleu

def brute_force_masked_bleu(refs, hyps, positions, max_n=4):
    """Test-local enumeration oracle: list every n-gram, filter by mask coverage."""
    logs = []
    for n in range(1, max_n + 1):
        num = den = 0
        for r, h, pos in zip(refs, hyps, positions):
            hgrams = [tuple(h[i : i + n]) for i in range(len(h) - n + 1) if set(range(i, i + n)) & pos]
            rgrams = [tuple(r[i : i + n]) for i in range(len(r) - n + 1) if set(range(i, i + n)) & pos]
            rcount = Counter(rgrams)
            for g, c in Counter(hgrams).items():
                num += min(c, rcount[g])
            den += len(hgrams)
        if den:
            logs.append(math.log(num / den) if num else math.log(1e-9))
    c = sum(len(pos & set(range(len(h)))) for h, pos in zip(hyps, positions))
    r = sum(len(pos & set(range(len(rr)))) for rr, pos in zip(refs, positions))
    bp = math.exp(1 - r / c) if c < r else 1.0
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def test_masked_bleu_single_mask_frozen_value():
    # ref/hyp differ only at an unmasked position; computed by hand:
    # qualifying precisions 1/1, 2/2, 3/3, 2/3 -> 100 * (2/3)^(1/4)
    refs = [["a", "small", "dog", "runs", "fast", "today"]]
    hyps = [["a", "small", "dog", "runs", "fast", "now"]]
    score = masked_bleu(refs, hyps, [{2}])
    assert abs(score - 100.0 * (2.0 / 3.0) ** 0.25) < 1e-9
    assert abs(score - 90.36020036098448) < 1e-6


def test_masked_bleu_matches_enumeration_oracle():
    rng = Rng(13)
    for case in range(25):
        refs, hyps, pos = [], [], []
        for _ in range(3):
            n = int(rng.integers(2, 9))
            ref = [int(t) for t in rng.integers(0, 6, n)]
            hyp = [int(t) if rng.uniform(()) < 0.7 else int(rng.integers(0, 6, ())) for t in ref]
            k = int(rng.integers(1, n + 1))
            p = {int(i) for i in rng.permutation(n)[:k]}
            refs.append(ref)
            hyps.append(hyp)
            pos.append(p)
        got = masked_bleu(refs, hyps, pos)
        want = brute_force_masked_bleu(refs, hyps, pos)
        assert abs(got - want) < 1e-9, f"case {case}"


def test_masked_bleu_all_positions_equals_plain_bleu():
    # positions are reference coordinates; covering every position on both
    # sides makes the restriction vacuous
    pos = [set(range(max(len(r), len(h)))) for r, h in zip(REFS, HYPS)]
    assert abs(masked_bleu(REFS, HYPS, pos) - bleu(REFS, HYPS)) < 1e-9


def test_masked_bleu_zero_masks_is_error():
    with pytest.raises(MetricError, match="zero masked"):
        masked_bleu(REFS, HYPS, [set(), set()])


def test_scores_within_range():
    assert 0.0 <= bleu(REFS, HYPS) <= 100.0
    assert 0.0 <= masked_bleu(REFS, HYPS, [{0}, {1}]) <= 100.0


# ---------------------------------------------------------------- report

def test_eval_report_serialization():
    rep = EvalReport(97.5, 83.2, 12.5, {"sentences": 10, "tokens": 100, "masked_tokens": 9})
    js = rep.to_json()
    assert js.endswith("\n") and '"token_accuracy": 97.5' in js
    tsv = rep.to_tsv()
    assert tsv.splitlines()[0].startswith("token_accuracy\tbleu")
    assert "12.5" in tsv


def test_eval_report_json_deterministic():
    rep = EvalReport(1.0, 2.0, None, {"tokens": 5, "sentences": 1, "masked_tokens": 0})
    assert rep.to_json() == rep.to_json()
    assert "NA" in rep.to_tsv()
