"""Scan timing against calibration size; thin wrapper over `lcp bench`.

Usage: python3 scripts/bench.py [--n 1000,10000,100000] [--out bench.csv]
"""

import sys

from lcp.harness.cli import main

if __name__ == "__main__":
    sys.exit(main(["bench", *sys.argv[1:]]))
