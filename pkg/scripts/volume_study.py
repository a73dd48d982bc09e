"""Repeated seeded volume estimates for one polytope, with a summary table.

    python scripts/volume_study.py --polytope cube:4 --exact 16 --runs 20
"""

import argparse
import json
import math
from dataclasses import asdict

import numpy as np

from hmcvol.cli import DESK_CHAIN, resolve_polytope
from hmcvol.cooling import CoolingConfig, estimate_volume
from hmcvol.sampler import ChainConfig


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--polytope", required=True)
    ap.add_argument("--exact", type=float, required=True)
    ap.add_argument("--runs", type=int, default=20)
    ap.add_argument("--epsilon", type=float, default=0.1)
    ap.add_argument("--c-k", type=float, default=1.0)
    ap.add_argument("--tol", type=float, default=0.15, help="relative band for the hit count")
    ap.add_argument("--json", help="write per-run records here")
    args = ap.parse_args()

    P = resolve_polytope(args.polytope)
    chain = ChainConfig(**DESK_CHAIN)
    rows = []
    for seed in range(args.runs):
        cfg = CoolingConfig(epsilon=args.epsilon, sigma0_sq=0.1, c_k=args.c_k, seed=seed)
        tr = estimate_volume(cfg, P, chain)
        rel = tr.volume / args.exact - 1
        rows.append({"seed": seed, "volume": tr.volume, "rel_err": rel, "ci95": tr.ci95,
                     "phases": len(tr.phases), "runtime_s": tr.runtime_s})
        print(f"seed {seed:2d}  volume {tr.volume:.5g}  err {rel:+.2%}  "
              f"ci [{tr.ci95[0]:.4g}, {tr.ci95[1]:.4g}]  {tr.runtime_s:.1f} s", flush=True)
    err = np.array([r["rel_err"] for r in rows])
    cover = np.mean([r["ci95"][0] <= args.exact <= r["ci95"][1] for r in rows])
    print(f"\n{P.name}: mean err {err.mean():+.2%}, sd {err.std(ddof=1):.2%}, "
          f"{int(np.sum(np.abs(err) <= args.tol))}/{len(rows)} within {args.tol:.0%}, "
          f"CI coverage {cover:.0%}, rmse {math.sqrt(np.mean(err ** 2)):.2%}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump({"chain": asdict(chain), "runs": rows}, f, indent=1)


if __name__ == "__main__":
    main()
