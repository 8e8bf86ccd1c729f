"""Test error vs sample size for y = x.beta (raw labels), m = 5000.

Equivalent to ``ntklab generalize``; extra arguments are passed through.
    python scripts/generalization.py --out runs/gen --p 1
"""
import sys

from ntklab.cli import main

if __name__ == "__main__":
    sys.exit(main(["generalize", *sys.argv[1:]]))
