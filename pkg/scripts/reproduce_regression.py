"""Uncorrelated Gaussian regression study, all six signals.

Writes ``<out>/<signal>/runs.csv`` and ``summary.json`` and prints the
median selected iterations next to the reference values.

    python3 scripts/reproduce_regression.py --runs 100 --out results/regression
"""

import argparse
import os
from pathlib import Path

import numpy as np

from ompstop.cli import load_experiment, write_outputs
from ompstop.simulation import SIGNAL_KINDS, monte_carlo

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REFERENCE = {
    "m_classical": (4, 7, 14, 15, 45, 53),
    "m_balanced": (5, 10, 31, 15, 51, 66),
    "tau-true-noise": (5, 9, 23, 15, 44, 52),
    "two-step": (4, 7, 12, 15, 37, 37),
}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results/regression")
    ap.add_argument("--signals", nargs="*", default=list(SIGNAL_KINDS))
    args = ap.parse_args()

    rows = []
    for kind in args.signals:
        spec = load_experiment(str(CONFIGS / f"regression_{kind}.json"))
        spec = type(spec)(**{**spec.__dict__, "runs": args.runs, "seed": args.seed})
        summary = monte_carlo(spec, workers=args.workers)
        write_outputs(summary, os.path.join(args.out, kind))
        med = {
            "m_classical": np.median(summary.oracle_values("m_classical")),
            "m_balanced": np.median(summary.oracle_values("m_balanced")),
        }
        for label in summary.methods:
            med[label] = summary.median(label)
        rows.append((kind, med))
        print(f"{kind}: done ({len(summary.runs)} runs, {len(summary.failures)} failed)")

    idx = {k: i for i, k in enumerate(SIGNAL_KINDS)}
    print(f"\n{'quantity':42s}" + "".join(f"{k:>12s}" for k, _ in rows))
    for label in rows[0][1]:
        line = f"{label:42s}"
        for kind, med in rows:
            ref = REFERENCE.get(label)
            cell = f"{med[label]:g}" + (f" ({ref[idx[kind]]})" if ref else "")
            line += f"{cell:>12s}"
        print(line)
    print("\nvalues in parentheses: reference medians")


if __name__ == "__main__":
    main()
