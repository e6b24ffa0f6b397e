#!/usr/bin/env python3
"""Write the templated toy corpus: train/heldout triplets plus a toy STS file.

Usage: python3 scripts/build_toy_corpus.py [out_dir] [--seed N] [--n-train N]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from syncse.toycorpus import build_toy_sts, build_toy_triplets, write_jsonl


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out_dir", nargs="?", default="toy_corpus")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--n-train", type=int, default=500)
    parser.add_argument("--n-heldout", type=int, default=100)
    parser.add_argument("--n-sts", type=int, default=150)
    args = parser.parse_args()

    out = Path(args.out_dir)
    write_jsonl(build_toy_triplets(args.n_train, args.seed, "train"), out / "train.jsonl")
    write_jsonl(build_toy_triplets(args.n_heldout, args.seed, "heldout"), out / "heldout.jsonl")
    write_jsonl(build_toy_sts(args.n_sts, args.seed), out / "toy_sts.jsonl")
    print(f"wrote train/heldout/toy_sts under {out}")


if __name__ == "__main__":
    main()
