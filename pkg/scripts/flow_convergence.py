#!/usr/bin/env python3
"""Step-size study for the flow derivative routes.

One Brownian path is drawn on the finest grid and summed pairwise down the
dt ladder, so every row of the table refines the same realization.  The gap
between the stochastic-exponential Jacobian and the variational recursion
is pure time-discretization error and should shrink down the ladder; the
finite-difference check against the Malliavin row should stay flat and small.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from zvonkin.catalog import rough_problem
from zvonkin.flowsim import (
    jacobian_closed_form,
    jacobian_variational,
    malliavin_fd_check,
    transform_path,
)
from zvonkin.resolvent import solve_resolvent_fd
from zvonkin.transform import build_transform
from zvonkin.wiener import BrownianGrid, brownian_grid, coarsen_increments


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--levels", type=int, default=4,
                    help="number of dt-halvings below the coarsest grid")
    ap.add_argument("--coarse-steps", type=int, default=1250)
    ap.add_argument("--radius", type=float, default=10.0)
    ap.add_argument("--h", type=float, default=0.01)
    args = ap.parse_args()

    problem = rough_problem()
    print(f"solving resolvent (radius {args.radius}, h {args.h}) ...")
    sol = solve_resolvent_fd(problem, 10.0, radius=args.radius, h=args.h)
    tr = build_transform(sol, problem)
    print(f"lambda 10: c = {sol.c_lambda:.4f}\n")

    n_fine = args.coarse_steps * 2 ** args.levels
    fine = brownian_grid(n_fine, problem.horizon / n_fine, 1, seed=args.seed)

    print(f"{'n_steps':>9} {'dt':>10} {'route gap':>12} {'fd rel gap':>12}")
    for lvl in range(args.levels + 1):
        factor = 2 ** (args.levels - lvl)
        n = n_fine // factor
        dt = problem.horizon / n
        inc = coarsen_increments(fine.increments, factor) if factor > 1 \
            else fine.increments
        bg = BrownianGrid(n_steps=n, dt=dt, k=1, seed=args.seed,
                          path_index=0, increments=inc)
        tp = transform_path(problem, tr, bg)
        jy, _ = jacobian_closed_form(tr, tp)
        jv = jacobian_variational(tr, tp)
        gap = float(np.abs(jy - jv).max() / np.abs(jy).max())
        fd = malliavin_fd_check(problem, tr, bg, 0.2, 0.4)
        print(f"{n:>9d} {dt:>10.2e} {gap:>12.3e} {fd.rel_gap:>12.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
