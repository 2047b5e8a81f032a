#!/usr/bin/env python3
"""Write the deterministic synthetic 10-class image set as IDX files."""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from dgmr.experiments import synthetic_images
from dgmr.hosts.idx import write_idx


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out-dir", default="data")
    ap.add_argument("--n", type=int, default=60000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images, labels = synthetic_images(args.seed, args.n)
    write_idx(images, out / "images.idx")
    write_idx(labels.astype(np.uint8), out / "labels.idx")
    print(f"wrote {args.n} images to {out}/images.idx, labels to {out}/labels.idx")


if __name__ == "__main__":
    main()
