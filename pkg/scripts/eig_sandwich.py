"""Check lower <= lambda_min(H) <= upper on many random sqrt(d)-sphere datasets.

    python scripts/eig_sandwich.py --datasets 100 --out runs/eig.json
"""
import argparse
import math

import numpy as np

from ntklab.experiments import sample_inputs
from ntklab.io import write_json
from ntklab.kernel import eigen_bounds
from ntklab.model import LabeledDataset


def spread_points(rng, n, d, min_angle, tries=100):
    pts = []
    for _ in range(tries * n):
        x = sample_inputs(rng, 1, d, math.sqrt(d))[0]
        if all(abs(x @ p) / d <= math.cos(min_angle) for p in pts):
            pts.append(x)
            if len(pts) == n:
                return np.array(pts)
    return None


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--datasets", type=int, default=100)
    ap.add_argument("--max-n", type=int, default=50)
    ap.add_argument("--max-d", type=int, default=10)
    ap.add_argument("--min-angle-deg", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    reports = []
    while len(reports) < args.datasets:
        n, d = int(rng.integers(2, args.max_n + 1)), int(rng.integers(2, args.max_d + 1))
        X = spread_points(rng, n, d, math.radians(args.min_angle_deg))
        if X is None:
            continue
        reports.append(dict(eigen_bounds(LabeledDataset(X, np.zeros(n))).as_dict(), n=n, d=d))
    bad = sum(not r["sandwich_ok"] for r in reports)
    print(f"{bad} violations in {len(reports)} datasets")
    if args.out:
        write_json(args.out, {"violations": bad, "reports": reports})


if __name__ == "__main__":
    main()
