"""Energy error of the implicit midpoint integrator against step size.

Writes a two-column data file and prints the log-log slope (about 2 for a
second-order method).
"""

import argparse
from pathlib import Path

from hmcvol.cli import energy_drift_data, resolve_polytope

ap = argparse.ArgumentParser()
ap.add_argument("--polytope", default="simplex:3")
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--out", default="energy_drift.dat")
args = ap.parse_args()

text, slope = energy_drift_data(resolve_polytope(args.polytope), args.seed)
Path(args.out).write_text(text, encoding="utf-8")
print(text, end="")
print(f"slope {slope:.3f}")
