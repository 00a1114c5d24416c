"""Wall-clock cost per method on one signal (default g2), including the
cross-validated Lasso baseline.

Sequential rules are timed by running the path only up to their stopping
point; HDAIC and the oracles pay for the whole path to ``m_max``.

    python3 scripts/timing.py --runs 20
"""

import argparse

import numpy as np

from ompstop.simulation import RuleSpec, monte_carlo, reference_spec

RULES = (
    RuleSpec("tau-true-noise"),
    RuleSpec("tau-estimated-noise"),
    RuleSpec("two-step"),
    RuleSpec("hdaic"),
    RuleSpec("lasso-cv"),
)
REFERENCE = {"tau-true-noise": 19.8, "tau-estimated-noise": 32.0, "two-step": 49.6, "hdaic": 411.6, "lasso-cv": 164.3}


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--signal", default="g2")
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    # one worker so that the timings are not disturbed by sibling processes
    summary = monte_carlo(reference_spec(args.signal, runs=args.runs, seed=args.seed, rules=RULES), workers=1)
    base = float(np.sum(summary.values("tau-true-noise", "seconds")))
    print(f"{'method':24s}{'total s':>10s}{'per run':>10s}{'ratio':>8s}{'reference s (100 runs)':>26s}")
    for label in summary.methods:
        total = float(np.sum(summary.values(label, "seconds")))
        print(f"{label:24s}{total:10.2f}{total / len(summary.runs):10.3f}{total / base:8.1f}{REFERENCE[label]:26.1f}")


if __name__ == "__main__":
    main()
