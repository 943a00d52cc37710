#!/usr/bin/env python3
"""Plot positioning-error curves from run log CSVs written by the tissue CLI.

Each CSV has columns action,epsilon,error,... with a terminal row holding the
final error. Curves sharing a label (for example step5.csv under several
seed directories) are averaged.

    plot_curves.py runs/study/seed_*/step5.csv runs/study/seed_*/step2.csv \
        runs/study/seed_*/variable.csv -o step_study.png
    plot_curves.py runs/rl/seed_*/rl_log.csv --label-by dir -o rl.png
"""

import argparse
import collections
import csv
import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_errors(path):
    with open(path, newline="") as f:
        return np.array([float(row["error"]) for row in csv.DictReader(f)])


def label_for(path, mode):
    p = pathlib.Path(path)
    if mode == "dir":
        return p.parent.name
    if mode == "path":
        return str(p)
    return p.stem


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("csv", nargs="+")
    ap.add_argument("-o", "--output", default="curves.png")
    ap.add_argument("--label-by", choices=["stem", "dir", "path"], default="stem")
    ap.add_argument("--threshold", type=float, default=None, help="draw a success threshold line")
    ap.add_argument("--title", default="")
    args = ap.parse_args()

    groups = collections.OrderedDict()
    for path in args.csv:
        groups.setdefault(label_for(path, args.label_by), []).append(read_errors(path))

    fig, ax = plt.subplots(figsize=(7, 4))
    for label, curves in groups.items():
        n = min(len(c) for c in curves)
        stack = np.stack([c[:n] for c in curves])
        mean = stack.mean(axis=0)
        x = np.arange(n)
        ax.plot(x, mean, label=f"{label} (n={len(curves)})" if len(curves) > 1 else label)
        if len(curves) > 1:
            ax.fill_between(x, stack.min(axis=0), stack.max(axis=0), alpha=0.15)
    if args.threshold is not None:
        ax.axhline(args.threshold, color="k", linestyle=":", linewidth=1)
    ax.set_xlabel("action")
    ax.set_ylabel("positioning error (px)")
    if args.title:
        ax.set_title(args.title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=120)
    print(args.output)


if __name__ == "__main__":
    main()
