"""Bernoulli classification study on the banded design, all six rescaled signals.

    python3 scripts/reproduce_classification.py --runs 100 --out results/classification
"""

import argparse
import os
from pathlib import Path

import numpy as np

from ompstop.cli import load_experiment, write_outputs
from ompstop.simulation import SIGNAL_KINDS, monte_carlo

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
REFERENCE = {"m_classical": (2, 3, 6, 13, 14, 8), "m_balanced": (7, 5, 12, 29, 32, 28)}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--runs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default="results/classification")
    args = ap.parse_args()

    for i, kind in enumerate(SIGNAL_KINDS):
        spec = load_experiment(str(CONFIGS / f"classification_{kind}.json"))
        spec = type(spec)(**{**spec.__dict__, "runs": args.runs, "seed": args.seed})
        summary = monte_carlo(spec, workers=args.workers)
        write_outputs(summary, os.path.join(args.out, kind))
        mo = np.median(summary.oracle_values("m_classical"))
        mb = np.median(summary.oracle_values("m_balanced"))
        print(f"\n== {kind}: m_o {mo:g} ({REFERENCE['m_classical'][i]}), m_b {mb:g} ({REFERENCE['m_balanced'][i]})")
        for label in summary.methods:
            print(
                f"  {label:28s} median m {summary.median(label):6.1f}"
                f"  median efficiency {summary.median(label, 'rel_efficiency'):.3f}"
            )


if __name__ == "__main__":
    main()
