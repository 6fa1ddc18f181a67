#!/usr/bin/env python3
"""Contraction-factor study: how fast does c(lambda) decay?

Tabulates c(lambda) for the linear testbed (where beta/(lambda - beta) is
exact) and the sqrt-drift testbed (no formula), and reports the smallest
lambda whose transform passes the diffeomorphism audit at the given cap.
"""

import argparse
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from zvonkin.catalog import linear_problem, rough_problem
from zvonkin.resolvent import lambda_sweep, select_lambda

LAMBDAS = (5.0, 10.0, 20.0, 40.0, 80.0, 160.0)


def show(problem, lambdas, oracle=None, **grid) -> None:
    sweep = lambda_sweep(problem, lambdas, **grid)
    print(f"{'lambda':>8} {'c(lambda)':>12}" + (f" {'exact':>12} {'rel err':>10}" if oracle else ""))
    for i, (lam, c) in enumerate(zip(sweep.lambdas, sweep.c_lambdas)):
        line = f"{lam:>8g} {c:>12.6f}"
        if oracle:
            ex = oracle(lam)
            line += f" {ex:>12.6f} {abs(c - ex) / ex:>10.2e}"
        print(line)
    print(f"strictly decreasing: {sweep.strictly_decreasing}\n")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radius", type=float, default=8.0)
    ap.add_argument("--h", type=float, default=0.02)
    ap.add_argument("--c-max", type=float, default=0.5,
                    help="contraction cap for the selection step")
    args = ap.parse_args()
    grid = {"radius": args.radius, "h": args.h}

    beta = 1.0
    lin = linear_problem(beta=beta, s=1.0, x0=0.5, horizon=1.0)
    print("linear drift beta*x (closed form beta/(lambda-beta)):")
    show(lin, [l for l in LAMBDAS if l > beta], oracle=lambda l: beta / (l - beta), **grid)

    rough = rough_problem()
    print("sqrt-drift testbed |x|^(1/2), sigma = 1 + 0.3 sin x:")
    show(rough, LAMBDAS[1:], **grid)

    lam, sol = select_lambda(rough, candidates=LAMBDAS[1:], c_max=args.c_max, **grid)
    print(f"selected lambda = {lam:g} (c = {sol.c_lambda:.4f} < {args.c_max})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
