"""Command-line front end.

Every subcommand is a thin wrapper over the library; all math lives in the
modules.  Exit codes: 0 success, 2 verification failure, 3 bad config or
arguments, 4 numerical failure (solver stall, rejected transform, escapes).
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from . import density as dn
from . import flowsim as fs
from .catalog import problem_from_config
from .errors import ConfigError, NumericalError
from .harness import (_resolve, _savetxt, config_from_dict, load_config,
                      run_pipeline, verify_pipeline)
from .resolvent import lambda_sweep, save_solution, solve_resolvent_fd
from .transform import build_transform, verify_diffeo, verify_ellipticity

__all__ = ["main"]


def _load(args) -> "ExperimentConfig":
    cfg = load_config(args.config)
    raw = copy.deepcopy(cfg.raw)
    if getattr(args, "paths", None) is not None:
        raw["simulate"]["n_paths"] = args.paths
    if getattr(args, "dt", None) is not None:
        raw["simulate"]["dt"] = args.dt
    if getattr(args, "seed", None) is not None:
        raw["simulate"]["seed"] = args.seed
    return config_from_dict(raw)


def _cmd_run(args) -> int:
    if args.workers is not None and args.workers > 1:
        print("note: single-process implementation; --workers > 1 has no effect")
    cfg = _load(args)
    run_pipeline(cfg, out_dir=args.out)
    return 0


def _cmd_verify(args) -> int:
    cfg = _load(args)
    report = verify_pipeline(cfg, n_paths=args.paths or 2000, dt=args.dt or 1e-3)
    if report.all_passed:
        print("verify: all checks passed")
        return 0
    failed = [name for name, ok, _ in report.checks if not ok]
    print(f"verify: FAILED ({', '.join(failed)})")
    return 2


def _cmd_solve_resolvent(args) -> int:
    cfg = _load(args)
    problem = cfg.problem()
    sol = solve_resolvent_fd(problem, args.lam, **cfg.grid_cfg)
    print(json.dumps({
        "lambda": sol.lam, "c_lambda": sol.c_lambda,
        "residual_sup": sol.residual_sup, "iterations": sol.iterations,
        "h": sol.h, "radius": sol.radius,
    }, sort_keys=True, indent=2))
    if args.out:
        save_solution(sol, args.out)
        print(f"wrote {Path(args.out) / 'solution.csv'}")
    return 0


def _cmd_sweep_lambda(args) -> int:
    cfg = _load(args)
    problem = cfg.problem()
    lambdas = [float(v) for v in args.lambdas.split(",")]
    sweep = lambda_sweep(problem, lambdas, **cfg.grid_cfg)
    print(f"{'lambda':>10} {'c':>12} {'residual':>12}")
    for lam, c, r in zip(sweep.lambdas, sweep.c_lambdas, sweep.residual_sups):
        print(f"{lam:>10g} {c:>12.6f} {r:>12.3e}")
    print(f"strictly decreasing: {sweep.strictly_decreasing}")
    if args.out:
        Path(args.out).write_text(json.dumps({
            "lambdas": list(sweep.lambdas), "c_lambdas": list(sweep.c_lambdas),
            "residual_sups": list(sweep.residual_sups),
            "strictly_decreasing": sweep.strictly_decreasing,
        }, sort_keys=True, indent=2) + "\n")
        print(f"wrote {args.out}")
    return 0


def _cmd_build_transform(args) -> int:
    cfg = _load(args)
    problem = cfg.problem()
    sol = solve_resolvent_fd(problem, args.lam, **cfg.grid_cfg)
    tr = build_transform(sol, problem)
    diffeo = verify_diffeo(tr)
    ellip = verify_ellipticity(tr)
    print(json.dumps({
        "lambda": sol.lam,
        "c_lambda": tr.c_lambda,
        "accepted": bool(diffeo.accepted),
        "round_trip_sup": diffeo.round_trip_sup,
        "lower_bound_dphi": diffeo.lower_bound_dphi,
        "ellipticity": {"c_min": ellip.c_min, "c_max": ellip.c_max},
        "valid_box": [tr.valid_lo.tolist(), tr.valid_hi.tolist()],
    }, sort_keys=True, indent=2))
    return 0 if diffeo.accepted else 4


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    problem = cfg.problem()
    _, sol, _ = _resolve(cfg, problem)
    tr = build_transform(sol, problem)
    sim = cfg.simulate_cfg
    ens = fs.simulate_equivalent_pair(problem, tr, n_paths=int(sim["n_paths"]),
                                      dt=float(sim["dt"]), seed=int(sim["seed"]))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _savetxt(out, {
        "x_direct": ens.x_direct[:, 0], "y": ens.y[:, 0],
        "x_from_y": ens.x_from_y[:, 0], "y_from_x": ens.y_from_x[:, 0],
        "escaped": ens.escaped.astype(float),
    })
    print(f"wrote {out} ({ens.n_paths} paths, {ens.n_escaped} escaped)")
    return 0


def _cmd_density(args) -> int:
    path = Path(args.samples)
    if not path.exists():
        raise ConfigError(f"samples file not found: {path}")
    with path.open() as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    cols = {n: data[:, i] for i, n in enumerate(names)}
    for need in ("x_direct", "x_from_y", "escaped"):
        if need not in cols:
            raise ConfigError(f"samples file lacks column {need!r}")
    keep = cols["escaped"] == 0.0
    grid = np.linspace(args.lo, args.hi, args.n)
    rho_a = dn.kde(cols["x_direct"][keep], grid)
    rho_b = dn.kde(cols["x_from_y"][keep], grid)
    ks = dn.ks_distance(cols["x_direct"][keep], cols["x_from_y"][keep])
    print(f"ks statistic {ks.statistic:.5f}  threshold {ks.threshold:.5f}  "
          f"passed {ks.passed}")
    if args.out:
        _savetxt(Path(args.out), {"x": grid, "rho_x_direct": rho_a.values,
                                  "rho_x_from_y": rho_b.values})
        print(f"wrote {args.out}")
    return 0


def _cmd_nv_density(args) -> int:
    cfg = _load(args)
    problem = cfg.problem()
    nv_cfg = cfg.nv_cfg or {}
    sim = cfg.simulate_cfg
    n_steps = int(round(problem.horizon / float(sim["dt"])))
    dt = problem.horizon / n_steps
    kind = args.functional or nv_cfg.get("functional", "transform_terminal")
    if kind == "brownian_terminal":
        resim = fs.brownian_terminal_functional()
    elif kind == "transform_terminal":
        _, sol, _ = _resolve(cfg, problem)
        tr = build_transform(sol, problem)
        resim = fs.transform_terminal_functional(problem, tr, dt, G=cfg.functional())
    else:
        raise ConfigError(f"unknown functional {kind!r}")
    z_grid = np.linspace(float(nv_cfg.get("z_lo", -3.0)),
                         float(nv_cfg.get("z_hi", 3.0)), int(nv_cfg.get("n", 121)))
    nv = dn.nourdin_viens_density(
        resim, n_paths=int(sim["n_paths"]), n_steps=n_steps, dt=dt,
        z_grid=z_grid, n_mehler=args.mehler, seed=int(sim["seed"]))
    print(f"mean {nv.mean:.5f}  E|F - mean| {nv.e_abs:.5f}  "
          f"g in [{nv.g.min():.4f}, {nv.g.max():.4f}]")
    if args.out:
        _savetxt(Path(args.out), {"z": nv.z_grid, "x": nv.x_grid,
                                  "g": nv.g, "density": nv.density})
        print(f"wrote {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="zvonkin",
        description="drift-taming transform pipeline: resolvent solve, "
                    "diffeomorphism certificates, coupled simulation, densities")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, paths=True):
        sp.add_argument("--config", required=True, help="experiment JSON file")
        if paths:
            sp.add_argument("--paths", type=int, help="override simulate.n_paths")
            sp.add_argument("--dt", type=float, help="override simulate.dt")
            sp.add_argument("--seed", type=int, help="override simulate.seed")

    sp = sub.add_parser("run", help="full pipeline with artifacts and manifest")
    common(sp)
    sp.add_argument("--out", help="output directory (default: config 'out')")
    sp.add_argument("--workers", type=int, help="accepted for interface parity")
    sp.set_defaults(fn=_cmd_run)

    sp = sub.add_parser("verify", help="reduced-scale end-to-end self-check")
    common(sp)
    sp.set_defaults(fn=_cmd_verify)

    sp = sub.add_parser("solve-resolvent", help="solve one resolvent problem")
    common(sp, paths=False)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.add_argument("--out", help="directory for solution.csv/solution.json")
    sp.set_defaults(fn=_cmd_solve_resolvent)

    sp = sub.add_parser("sweep-lambda", help="tabulate the contraction factor")
    common(sp, paths=False)
    sp.add_argument("--lambdas", required=True, help="comma-separated values")
    sp.add_argument("--out", help="JSON output file")
    sp.set_defaults(fn=_cmd_sweep_lambda)

    sp = sub.add_parser("build-transform", help="certificates for one lambda")
    common(sp, paths=False)
    sp.add_argument("--lambda", dest="lam", type=float, required=True)
    sp.set_defaults(fn=_cmd_build_transform)

    sp = sub.add_parser("simulate", help="coupled ensemble to a samples CSV")
    common(sp)
    sp.add_argument("--out", required=True, help="samples CSV path")
    sp.set_defaults(fn=_cmd_simulate)

    sp = sub.add_parser("density", help="KDE + KS from a samples CSV")
    sp.add_argument("--samples", required=True, help="CSV from 'simulate'")
    sp.add_argument("--lo", type=float, required=True)
    sp.add_argument("--hi", type=float, required=True)
    sp.add_argument("--n", type=int, default=401)
    sp.add_argument("--out", help="density CSV path")
    sp.set_defaults(fn=_cmd_density)

    sp = sub.add_parser("nv-density", help="derivative-based density estimate")
    common(sp)
    sp.add_argument("--mehler", type=int, default=8)
    sp.add_argument("--functional", choices=["brownian_terminal", "transform_terminal"])
    sp.add_argument("--out", help="CSV output file")
    sp.set_defaults(fn=_cmd_nv_density)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
