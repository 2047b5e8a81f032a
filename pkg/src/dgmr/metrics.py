"""Evaluation metrics: 1-by-1 token accuracy, corpus BLEU, and Masked BLEU.

BLEU is the corpus-level Papineni formulation: geometric mean of clipped
n-gram precisions (n=1..max_n) times a brevity penalty. Two small conventions
are pinned down here because tiny corpora hit them immediately:

  * an order whose candidate n-gram count is zero corpus-wide (every sentence
    shorter than n) is dropped from the geometric mean — otherwise identical
    corpora of short sentences could not score exactly 100;
  * an order with candidates but zero matches contributes the smoothing
    epsilon 1e-9 instead of log 0.

Masked BLEU restricts both candidate and clipped reference counts to n-grams
covering at least one masked position (positions are reference coordinates;
hosts emit positionally aligned output). Its brevity penalty uses qualifying
unigram counts, which makes the all-positions-masked case reduce exactly to
plain BLEU.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Sequence, Set

SMOOTH_EPS = 1e-9


class MetricError(ValueError):
    pass


@dataclass
class EvalReport:
    token_accuracy: float
    bleu: float
    masked_bleu: float | None
    counts: Dict[str, int]

    def to_json(self) -> str:
        payload = {
            "token_accuracy": self.token_accuracy,
            "bleu": self.bleu,
            "masked_bleu": self.masked_bleu,
            "counts": dict(sorted(self.counts.items())),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_tsv(self) -> str:
        cols = [
            f"{self.token_accuracy!r}",
            f"{self.bleu!r}",
            "NA" if self.masked_bleu is None else f"{self.masked_bleu!r}",
            str(self.counts.get("sentences", 0)),
            str(self.counts.get("tokens", 0)),
            str(self.counts.get("masked_tokens", 0)),
        ]
        return "token_accuracy\tbleu\tmasked_bleu\tsentences\ttokens\tmasked_tokens\n" + "\t".join(cols) + "\n"


def token_accuracy(references: Sequence[Sequence], hypotheses: Sequence[Sequence]) -> float:
    """Percent of positions whose tokens match, over aligned sentence pairs."""
    if len(references) != len(hypotheses):
        raise MetricError(f"corpus sizes differ: {len(references)} refs vs {len(hypotheses)} hyps")
    matches = total = 0
    for i, (ref, hyp) in enumerate(zip(references, hypotheses)):
        if len(ref) != len(hyp):
            raise MetricError(f"pair {i}: lengths differ ({len(ref)} vs {len(hyp)}); align before calling")
        total += len(ref)
        matches += sum(1 for r, h in zip(ref, hyp) if r == h)
    if total == 0:
        raise MetricError("token accuracy of an empty corpus")
    return 100.0 * matches / total


def _ngram_counts(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _qualifying_ngram_counts(tokens: Sequence, n: int, positions: Set[int]) -> Counter:
    out: Counter = Counter()
    for i in range(len(tokens) - n + 1):
        if any(j in positions for j in range(i, i + n)):
            out[tuple(tokens[i : i + n])] += 1
    return out


def _geometric_bleu(precisions: List[tuple], cand_len: int, ref_len: int) -> float:
    logs = []
    for num, den in precisions:
        if den == 0:
            continue  # no candidates of this order anywhere: drop the order
        p = num / den if num > 0 else SMOOTH_EPS
        logs.append(math.log(p))
    if not logs or cand_len == 0:
        raise MetricError("BLEU undefined: no candidate n-grams")
    bp = math.exp(1.0 - ref_len / cand_len) if cand_len < ref_len else 1.0
    return 100.0 * bp * math.exp(sum(logs) / len(logs))


def bleu(references: Sequence[Sequence], hypotheses: Sequence[Sequence], max_n: int = 4) -> float:
    if len(references) != len(hypotheses):
        raise MetricError(f"corpus sizes differ: {len(references)} refs vs {len(hypotheses)} hyps")
    if not hypotheses or all(len(h) == 0 for h in hypotheses):
        raise MetricError("BLEU of an empty hypothesis corpus")
    precisions = []
    for n in range(1, max_n + 1):
        num = den = 0
        for ref, hyp in zip(references, hypotheses):
            hc = _ngram_counts(hyp, n)
            rc = _ngram_counts(ref, n)
            num += sum(min(c, rc[g]) for g, c in hc.items())
            den += sum(hc.values())
        precisions.append((num, den))
    cand_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    return _geometric_bleu(precisions, cand_len, ref_len)


def masked_bleu(
    references: Sequence[Sequence],
    hypotheses: Sequence[Sequence],
    mask_positions: Sequence[Set[int]],
    max_n: int = 4,
) -> float:
    if not (len(references) == len(hypotheses) == len(mask_positions)):
        raise MetricError("references, hypotheses and mask positions must align")
    if sum(len(p) for p in mask_positions) == 0:
        raise MetricError("masked BLEU undefined: corpus has zero masked positions")
    precisions = []
    for n in range(1, max_n + 1):
        num = den = 0
        for ref, hyp, pos in zip(references, hypotheses, mask_positions):
            hc = _qualifying_ngram_counts(hyp, n, pos)
            rc = _qualifying_ngram_counts(ref, n, pos)
            num += sum(min(c, rc[g]) for g, c in hc.items())
            den += sum(hc.values())
        precisions.append((num, den))
    cand_len = sum(sum(1 for i in range(len(h)) if i in p) for h, p in zip(hypotheses, mask_positions))
    ref_len = sum(sum(1 for i in range(len(r)) if i in p) for r, p in zip(references, mask_positions))
    return _geometric_bleu(precisions, cand_len, ref_len)
