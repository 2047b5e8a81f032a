"""Corpus ingestion, word-level vocabulary, and the masking policies.

Tokenization is lowercased whitespace splitting: the masking policies and the
evaluation metrics all operate on words, so nothing subword is needed here.

Policies (per-sentence unless stated):
  low        40% of sentences get one [MASK] on a uniformly chosen meaningful
             word (non-stopword, non-punctuation); all-stopword sentences
             simply get no mask. A cascade knob extends this to up to three
             masks drawn the multi30k way.
  medium     every token masked independently with probability 0.4.
  high       same with probability 0.6.
  multi30k_a 80% of sentences; one mask, then a second w.p. 0.8, then a third
             w.p. 0.8 given the second; stopwords excluded.
  multi30k_b every token masked with probability 0.6.
  disrupted  positions chosen exactly like `low`, but filled with a random
             non-reserved vocabulary word that differs from the original.
"""

from __future__ import annotations

import string
import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Set, Tuple

import numpy as np

from .rng import Rng

PAD, UNK, MASK, BOS, EOS = 0, 1, 2, 3, 4
RESERVED = (("[PAD]", PAD), ("[UNK]", UNK), ("[MASK]", MASK), ("[BOS]", BOS), ("[EOS]", EOS))
N_RESERVED = len(RESERVED)

POLICY_KINDS = ("low", "medium", "high", "multi30k_a", "multi30k_b", "disrupted")

_PUNCT = set(string.punctuation)


class CorpusError(ValueError):
    pass


@dataclass
class Vocab:
    token_to_id: Dict[str, int]
    id_to_token: List[str]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], min_freq: int = 1) -> "Vocab":
        counts: Dict[str, int] = {}
        empty = True
        for sent in sentences:
            empty = False
            for tok in sent:
                counts[tok] = counts.get(tok, 0) + 1
        if empty:
            raise CorpusError("cannot build a vocabulary from an empty corpus")
        kept = [t for t, c in counts.items() if c >= min_freq and t not in dict(RESERVED)]
        kept.sort(key=lambda t: (-counts[t], t))  # frequency desc, then lexicographic
        id_to_token = [name for name, _ in RESERVED] + kept
        return cls({t: i for i, t in enumerate(id_to_token)}, id_to_token)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens: Sequence[str]) -> List[int]:
        return [self.token_to_id.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> List[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        toks = Path(path).read_text(encoding="utf-8").splitlines()
        for name, idx in RESERVED:
            if toks[idx] != name:
                raise CorpusError(f"vocab file lost reserved token {name} at id {idx}")
        return cls({t: i for i, t in enumerate(toks)}, toks)


@dataclass
class MaskPolicy:
    kind: str
    sentence_rate: float = 0.4  # low/disrupted: fraction of sentences masked
    token_rate: float = 0.4  # medium/high/multi30k_b: per-token probability
    cascade: int = 1  # low/disrupted: up to this many cascaded masks
    cascade_rate: float = 0.8  # multi30k_a cascade probability

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise CorpusError(f"unknown policy kind {self.kind!r}")
        for p in (self.sentence_rate, self.token_rate, self.cascade_rate):
            if not 0.0 <= p <= 1.0:
                raise CorpusError("policy probabilities must lie in [0, 1]")
        if self.kind == "high":
            self.token_rate = 0.6
        elif self.kind == "medium":
            self.token_rate = 0.4
        elif self.kind == "multi30k_b":
            self.token_rate = 0.6
        elif self.kind == "multi30k_a":
            self.sentence_rate = 0.8


@dataclass
class MaskedSentence:
    original: List[int]
    masked: List[int]
    positions: Set[int]


@dataclass
class MaskedCorpus:
    sentences: List[MaskedSentence]
    policy: MaskPolicy
    seed: int

    def export(self, path) -> None:
        lines = []
        for s in self.sentences:
            pos = ",".join(str(p) for p in sorted(s.positions))
            lines.append(
                " ".join(map(str, s.original)) + "\t" + " ".join(map(str, s.masked)) + "\t" + pos
            )
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, policy: MaskPolicy, seed: int) -> "MaskedCorpus":
        sentences = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line:
                continue
            orig, masked, pos = line.split("\t")
            positions = {int(p) for p in pos.split(",")} if pos else set()
            sentences.append(MaskedSentence([int(t) for t in orig.split()], [int(t) for t in masked.split()], positions))
        return cls(sentences, policy, seed)


def load_corpus(path, fmt: str = "lines") -> List[List[str]]:
    """One sentence per line, UTF-8; lowercased whitespace tokens, blank lines dropped."""
    if fmt != "lines":
        raise CorpusError(f"unknown corpus format {fmt!r}")
    p = Path(path)
    if not p.exists():
        raise CorpusError(f"corpus file not found: {p}")
    try:
        text = p.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise CorpusError(f"{p}: not valid UTF-8 ({e})") from None
    sentences = []
    for line in text.replace("\r\n", "\n").split("\n"):
        toks = line.strip().lower().split()
        if toks:
            sentences.append(toks)
    return sentences


def stopword_tokens() -> Set[str]:
    text = resources.files("dgmr.assets").joinpath("stopwords_en.txt").read_text(encoding="utf-8")
    return set(text.split())


def stopwords(vocab: Vocab) -> Set[int]:
    """The bundled English stopword list mapped through the vocab; OOV entries ignored."""
    ids = set()
    for tok in stopword_tokens():
        i = vocab.token_to_id.get(tok)
        if i is not None:
            ids.add(i)
    return ids


def _meaningful_positions(ids: Sequence[int], stop_ids: Set[int], vocab: Vocab) -> List[int]:
    out = []
    for i, t in enumerate(ids):
        if t < N_RESERVED or t in stop_ids:
            continue
        tok = vocab.id_to_token[t]
        if all(ch in _PUNCT for ch in tok):
            continue  # punctuation is not a "meaningful word"
        out.append(i)
    return out


def apply_policy(
    ids: Sequence[int],
    policy: MaskPolicy,
    stop_ids: Set[int],
    rng: Rng,
    vocab: Vocab,
) -> Tuple[List[int], Set[int]]:
    """Mask one sentence; returns (masked ids, positions). Deterministic in rng."""
    ids = list(ids)
    if not ids:
        raise CorpusError("cannot mask an empty sentence")
    positions: Set[int] = set()

    if policy.kind in ("medium", "high", "multi30k_b"):
        # no grammatical exclusion: every token masked independently
        draws = rng.uniform(len(ids))
        positions = {i for i in range(len(ids)) if draws[i] < policy.token_rate}
    else:  # low, disrupted, multi30k_a
        if rng.uniform(()) < policy.sentence_rate:
            eligible = _meaningful_positions(ids, stop_ids, vocab)
            if eligible:
                max_masks = 3 if policy.kind == "multi30k_a" else policy.cascade
                count = 1
                while count < min(max_masks, len(eligible)):
                    if rng.uniform(()) < policy.cascade_rate:
                        count += 1
                    else:
                        break
                picks = rng.permutation(len(eligible))[:count]
                positions = {eligible[i] for i in picks}

    masked = list(ids)
    for pos in positions:
        if policy.kind == "disrupted":
            # a random non-reserved word that is never the original token
            while True:
                cand = int(rng.integers(N_RESERVED, len(vocab), ()))
                if cand != ids[pos]:
                    break
            masked[pos] = cand
        else:
            masked[pos] = MASK
    return masked, positions


def mask_corpus(
    encoded: Sequence[Sequence[int]],
    policy: MaskPolicy,
    stop_ids: Set[int],
    seed: int,
    vocab: Vocab,
) -> MaskedCorpus:
    """Apply a policy to every sentence with per-sentence derived rng streams."""
    root = Rng(seed)
    sentences = []
    for i, ids in enumerate(encoded):
        masked, positions = apply_policy(ids, policy, stop_ids, root.spawn(i), vocab)
        sentences.append(MaskedSentence(list(ids), masked, positions))
    return MaskedCorpus(sentences, policy, seed)


def pad_batch(sentences: Sequence[Sequence[int]], pad_id: int = PAD) -> Tuple[np.ndarray, np.ndarray]:
    """Right-pad to the batch max length; returns (ids, 0/1 mask) arrays."""
    if not sentences:
        raise CorpusError("cannot pad an empty batch")
    width = max(len(s) for s in sentences)
    ids = np.full((len(sentences), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(sentences), width), dtype=np.float32)
    for i, s in enumerate(sentences):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask
