#!/usr/bin/env python3
"""Deep/Top splice experiment on the tiny transformer MLM over the bundled corpus."""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from dgmr.experiments import run_transformer_experiment
from dgmr.textdata import Vocab, load_corpus


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--corpus", default=str(Path(__file__).resolve().parents[1] / "src/dgmr/assets/toy_corpus.txt"))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--pretrain-epochs", type=int, default=10)
    ap.add_argument("--finetune-epochs", type=int, default=5)
    ap.add_argument("--out", default="runs/transformer_experiment.json")
    args = ap.parse_args()

    sents = load_corpus(args.corpus)
    vocab = Vocab.build(sents)
    encoded = [vocab.encode(s) for s in sents]

    def progress(epoch, tr, va):
        print(f"  pretrain epoch {epoch}: train {tr:.4f} val {va:.4f}", flush=True)

    result = run_transformer_experiment(
        encoded, vocab, seed=args.seed,
        pretrain_epochs=args.pretrain_epochs, finetune_epochs=args.finetune_epochs,
        test_fraction=0.2, progress=progress,
    )
    rows = {"baseline": result.baseline} | result.spliced
    payload = {}
    for name, ev in rows.items():
        print(f"{name}: masked_acc={ev.masked_accuracy:.2f} bleu={ev.report.bleu:.2f} "
              f"masked_bleu={ev.report.masked_bleu:.2f} entropy={ev.mean_masked_entropy:.3f}")
        payload[name] = {
            "masked_accuracy": ev.masked_accuracy,
            "token_accuracy": ev.report.token_accuracy,
            "bleu": ev.report.bleu,
            "masked_bleu": ev.report.masked_bleu,
            "mean_masked_entropy": ev.mean_masked_entropy,
        }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2))
    print(f"metrics written to {out}")


if __name__ == "__main__":
    main()
