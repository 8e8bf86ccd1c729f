"""Series, feature-map and finite-width agreement of the NTK.

    python scripts/kernel_check.py --out runs/kernel --d 5
"""
import sys

from ntklab.cli import main

if __name__ == "__main__":
    sys.exit(main(["kernel-check", *sys.argv[1:]]))
