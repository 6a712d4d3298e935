#!/usr/bin/env python3
"""Thread-count-factor sweep for the row-tile kernels on V100, both
precisions, with plots.

Usage: python scripts/tcf_sweep.py [outdir]
"""

import sys
from pathlib import Path

from tsgemm.cli import cmd_sweep_tcf
from tsgemm.core import Precision


def main() -> int:
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out")
    outdir.mkdir(parents=True, exist_ok=True)
    for precision in (Precision.SINGLE, Precision.DOUBLE):
        out = outdir / f"tcf_sweep_{precision.value}.csv"
        cmd_sweep_tcf("V100", 16, 16, precision, str(out), plot=True)
        print(f"wrote {out} (+ .png)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
