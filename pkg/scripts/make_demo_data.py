"""Regenerate the bundled demo dataset and the golden ``fit`` outputs.

Run from the repository root::

    python3 scripts/make_demo_data.py
"""

import csv
import json
from pathlib import Path

import numpy as np

from ompstop.cli import fit_report
from ompstop.omp import load_csv

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"
GOLDEN_RULES = ("tau-true-noise", "tau-estimated-noise", "two-step", "hdaic", "oracle-classical", "oracle-balanced")


def write_demo(path: Path, n: int = 40, p: int = 12, seed: int = 11) -> None:
    rng = np.random.default_rng(seed)
    X = np.round(rng.standard_normal((n, p)), 6)
    beta = np.zeros(p)
    beta[:4] = [2.0, -1.5, 1.0, 0.5]
    f = X @ beta
    eps = np.round(0.5 * rng.standard_normal(n), 6)
    y = f + eps
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["y"] + [f"v{j + 1}" for j in range(p)] + ["epsilon"])
        for i in range(n):
            w.writerow([repr(float(y[i]))] + [repr(float(v)) for v in X[i]] + [repr(float(eps[i]))])


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    demo = DATA / "demo.csv"
    write_demo(demo)
    ds = load_csv(demo)
    golden = {rule: fit_report(ds, rule, {}) for rule in GOLDEN_RULES}
    with open(DATA / "demo_fit_golden.json", "w") as fh:
        json.dump(golden, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for rule, rep in golden.items():
        print(f"{rule:22s} m={rep['selected_m']:3d} columns={rep['selected_columns']}")


if __name__ == "__main__":
    main()
