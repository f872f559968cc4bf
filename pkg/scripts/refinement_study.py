#!/usr/bin/env python3
"""Grid / step refinement study on a model file.

Sweeps the lattice resolution and the sweep step, reporting the assembled
value at a reference initial law, nodewise deltas between consecutive levels,
the worst one-step consistency mismatch, and the worst stationarity residual.
No convergence-rate claim is made; the deltas themselves are the deliverable.

Usage:
    python scripts/refinement_study.py --model models/three_state.json \
        --out out/refinement.csv [--mu 0.2,0.3,0.5]
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from pomc import build_grid, check_hjb, dpp_mismatch, load_model, solve_value
from pomc.model import InitialLaw
from pomc.solver import assemble_V


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--model", required=True)
    ap.add_argument("--out", default="out/refinement.csv")
    ap.add_argument("--mu", default=None, help="comma-separated initial law")
    ap.add_argument("--grids", default="8,16,32,64")
    ap.add_argument("--steps", default="0.04,0.02,0.01,0.005")
    ap.add_argument("--tol", type=float, default=1e-8)
    args = ap.parse_args()

    model = load_model(args.model)
    if args.mu:
        mu = InitialLaw(np.array([float(x) for x in args.mu.split(",")]))
    else:
        mu = InitialLaw(np.full(model.n_states, 1.0 / model.n_states))
    grids = [int(x) for x in args.grids.split(",")]
    steps = [float(x) for x in args.steps.split(",")]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    prev_table = None
    for n, hb in zip(grids, steps):
        grid = build_grid(model, n)
        table = solve_value(model, grid, tol=args.tol, h_b=hb)
        value = assemble_V(model, table, mu)
        if prev_table is not None:
            sup_delta = max(
                abs(prev_table.interpolate(grid.node_belief(i)) - table.values[i])
                for i in range(grid.n_nodes)
            )
        else:
            sup_delta = float("nan")
        dpp = dpp_mismatch(model, table, horizon=0.5, step=2e-3)
        hjb = check_hjb(model, table)
        rows.append({
            "n_grid": n,
            "h_b": hb,
            "iterations": table.metadata["iterations"],
            "V_mu": value,
            "sup_delta_to_previous": sup_delta,
            "dpp_max_mismatch": dpp["max_mismatch"],
            "hjb_max_residual": hjb.max_residual,
        })
        print(f"n={n:3d} h_b={hb}: V={value:.8f} "
              f"delta={sup_delta:.2e} dpp={dpp['max_mismatch']:.2e} "
              f"hjb={hjb.max_residual:.2e}")
        prev_table = table

    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
