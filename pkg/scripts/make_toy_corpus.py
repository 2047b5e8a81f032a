#!/usr/bin/env python3
"""Generate the bundled toy corpus: template-grammar scene descriptions.

The grammar ties word pairs together (each color owns a garment, each subject
owns a verb, each verb owns a place), so a sentence with a single masked
content word is usually recoverable from context — a masked LM can be
meaningfully scored on it — while number words and adjectives stay genuinely
ambiguous. Regenerating with the same seed reproduces the file byte for byte.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dgmr.rng import Rng

# deterministic collocations (both directions recoverable)
COLOR_GARMENT = [
    ("red", "shirt"), ("blue", "jacket"), ("black", "coat"), ("white", "dress"),
    ("green", "scarf"), ("yellow", "hat"), ("purple", "uniform"), ("orange", "vest"),
]
SUBJ_VERB_PLACE = [
    ("chef", "cooking", "kitchen"), ("student", "reading", "library"),
    ("swimmer", "swimming", "beach"), ("dancer", "dancing", "plaza"),
    ("farmer", "gardening", "garden"), ("artist", "painting", "studio"),
    ("worker", "working", "office"), ("traveler", "waiting", "station"),
    ("child", "playing", "park"), ("shopper", "shopping", "market"),
]
VERB_OBJECT = [
    ("cooking", "pan"), ("reading", "book"), ("swimming", "towel"),
    ("dancing", "drum"), ("gardening", "shovel"), ("painting", "brush"),
    ("working", "laptop"), ("waiting", "ticket"), ("playing", "ball"),
    ("shopping", "basket"),
]
PLURALS = {
    "chef": "chefs", "student": "students", "swimmer": "swimmers", "dancer": "dancers",
    "farmer": "farmers", "artist": "artists", "worker": "workers", "traveler": "travelers",
    "child": "children", "shopper": "shoppers",
}
ADJS = ["young", "old", "tall", "small", "happy", "tired"]  # genuinely ambiguous
NUMS = ["two", "three", "four", "five"]  # genuinely ambiguous


def pick(rng, options):
    return options[int(rng.integers(0, len(options), ()))]


def sentence(rng) -> str:
    t = int(rng.integers(0, 8, ()))
    color, garment = pick(rng, COLOR_GARMENT)
    subj, verb, place = pick(rng, SUBJ_VERB_PLACE)
    obj = dict(VERB_OBJECT)[verb]
    if t == 0:
        return f"a {subj} in a {color} {garment} is {verb} in the {place} ."
    if t == 1:
        return f"the {pick(rng, ADJS)} {subj} is {verb} near the {place} ."
    if t == 2:
        return f"{pick(rng, NUMS)} {PLURALS[subj]} are {verb} in the {place} ."
    if t == 3:
        return f"a {pick(rng, ADJS)} {subj} is holding a {obj} in the {place} ."
    if t == 4:
        return f"the {subj} in the {color} {garment} is {verb} with a {obj} ."
    if t == 5:
        subj2, verb2, place2 = pick(rng, SUBJ_VERB_PLACE)
        return f"a {subj} and a {subj2} are {verb2} in the {place2} ."
    if t == 6:
        return f"{pick(rng, NUMS)} {PLURALS[subj]} in {color} {garment}s are {verb} near the {place} ."
    return f"the {subj} with the {color} {obj} is {verb} in the {place} ."


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/dgmr/assets/toy_corpus.txt"))
    ap.add_argument("--n", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=13)
    args = ap.parse_args()

    rng = Rng(args.seed)
    lines = [sentence(rng) for _ in range(args.n)]
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {args.n} sentences to {args.out}")


if __name__ == "__main__":
    main()
