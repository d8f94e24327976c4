"""End-to-end smoke run on one system: dataset, adversarial training,
generation, physics evaluation, dimension report.

Desk-scale settings; finishes in a few minutes. For the full-scale runs
behind the headline numbers see reproduce_dimensions.py.
"""

import argparse
import sys

from phasegan.cli import main as cli


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--system", default="mass_spring")
    ap.add_argument("--out", default="runs/pipeline")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    gan = [
        f"gan.epochs={args.epochs}",
        f"gan.seed={args.seed}",
        "gan.batch_size=64",
        "gan.hnn_hidden=64",
        "gan.f_hidden=64",
        "gan.g_hidden=96",
        "gan.d_hidden=32",
    ]
    steps = [
        ["dataset", "--out", args.out, f"dataset.systems={args.system}",
         "dataset.count=256"],
        ["train-gan", "--out", args.out] + gan,
        ["generate", "--out", args.out, "--system", args.system],
        ["eval", "--out", args.out, "--system", args.system],
        ["analyze", "--out", args.out, "--system", args.system],
    ]
    for argv in steps:
        rc = cli(argv)
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
