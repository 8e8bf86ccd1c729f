"""Width sweep of the 100-point quadratic task: V_perp and distance trajectories.

Equivalent to ``ntklab figure1``; extra arguments are passed through.
    python scripts/figure1.py --out runs/figure1 --threads 4
"""
import sys

from ntklab.cli import main

if __name__ == "__main__":
    sys.exit(main(["figure1", *sys.argv[1:]]))
