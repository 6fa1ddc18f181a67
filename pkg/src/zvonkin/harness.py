"""End-to-end experiment pipeline and its JSON config surface.

A run stages: assumption audit, resolvent solve (fixed lambda or policy
sweep), transform construction with diffeomorphism/ellipticity certificates,
coupled path simulation, density-level checks, and optionally the flow
nondegeneracy pass and the conditional-variance density.  Every stage drops
deterministic artifacts into the output directory; `manifest.json` is
written last with a sha256 per file, so a finished run is recognizable and
two runs of the same config and seed produce byte-identical JSON.  No
timestamps anywhere for that reason.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import density as dn
from . import flowsim as fs
from .catalog import make_functional, problem_from_config
from .errors import ConfigError, NumericalError
from .model import check_assumptions, default_grid
from .resolvent import (ResolventSolution, lambda_sweep, save_solution,
                        select_lambda, solve_resolvent_fd)
from .transform import (ZvonkinTransform, build_transform, verify_diffeo,
                        verify_ellipticity)

__all__ = [
    "ExperimentConfig",
    "load_config",
    "run_pipeline",
    "verify_pipeline",
    "VerifyReport",
    "SCHEMA_VERSION",
]

SCHEMA_VERSION = 1

_TOP_KEYS = {"schema", "label", "problem", "lambda", "grid", "simulate",
             "density", "flow", "nv", "functional", "out"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated contents of an experiment JSON file."""

    label: str
    problem_cfg: dict
    lambda_cfg: dict
    grid_cfg: dict
    simulate_cfg: dict
    density_cfg: dict
    flow_cfg: dict | None
    nv_cfg: dict | None
    functional_cfg: dict | None
    out: str
    raw: dict = field(repr=False)

    def problem(self):
        return problem_from_config(self.problem_cfg)

    def functional(self):
        if self.functional_cfg is None:
            return None
        return make_functional(self.functional_cfg)


def _require(cfg: dict, key: str, cls, what: str):
    if key not in cfg:
        raise ConfigError(f"{what}: missing required key {key!r}")
    v = cfg[key]
    if cls is float and isinstance(v, int):
        v = float(v)
    if not isinstance(v, cls):
        raise ConfigError(f"{what}: key {key!r} must be {cls.__name__}, got {type(v).__name__}")
    return v


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {path}: {e}")
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config schema must be {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    label = _require(raw, "label", str, "config")
    problem = _require(raw, "problem", dict, "config")
    lam = raw.get("lambda", {})
    if not isinstance(lam, dict):
        raise ConfigError("config: 'lambda' must be an object")
    if "value" in lam and "candidates" in lam:
        raise ConfigError("config: 'lambda' takes either 'value' or 'candidates', not both")
    grid = raw.get("grid", {})
    sim = _require(raw, "simulate", dict, "config")
    _require(sim, "n_paths", int, "simulate")
    _require(sim, "dt", float, "simulate")
    _require(sim, "seed", int, "simulate")
    den = _require(raw, "density", dict, "config")
    for k in ("lo", "hi"):
        _require(den, k, float, "density")
    _require(den, "n", int, "density")
    if den["lo"] >= den["hi"] or den["n"] < 2:
        raise ConfigError("density: need lo < hi and n >= 2")
    return ExperimentConfig(
        label=label,
        problem_cfg=problem,
        lambda_cfg=lam,
        grid_cfg=grid,
        simulate_cfg=sim,
        density_cfg=den,
        flow_cfg=raw.get("flow"),
        nv_cfg=raw.get("nv"),
        functional_cfg=raw.get("functional"),
        out=raw.get("out", "runs/" + label),
        raw=raw,
    )


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _savetxt(path: Path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    data = np.column_stack([np.asarray(columns[n], dtype=float) for n in names])
    np.savetxt(path, data, fmt="%.17g", delimiter=",",
               header=",".join(names), comments="")


def _resolve(cfg: ExperimentConfig, problem):
    """Lambda stage: fixed value or smallest candidate with small c."""
    grid_kw = dict(cfg.grid_cfg)
    lam_cfg = cfg.lambda_cfg
    if "value" in lam_cfg:
        lam = float(lam_cfg["value"])
        sol = solve_resolvent_fd(problem, lam, **grid_kw)
        return lam, sol, None
    candidates = tuple(lam_cfg.get("candidates", (10.0, 20.0, 40.0, 80.0, 160.0)))
    c_max = float(lam_cfg.get("c_max", 0.5))
    lam, sol = select_lambda(problem, candidates=candidates, c_max=c_max, **grid_kw)
    return lam, sol, candidates


def _diffeo_dict(rep) -> dict:
    return {
        "accepted": bool(rep.accepted),
        "c_lambda": rep.c_lambda,
        "sup_dphi": rep.sup_dphi,
        "min_det_dphi": rep.min_det_dphi,
        "lower_bound_dphi": rep.lower_bound_dphi,
        "sup_dphi_inv": rep.sup_dphi_inv,
        "sup_d2phi_inv": rep.sup_d2phi_inv,
        "round_trip_sup": rep.round_trip_sup,
        "n_points": rep.n_points,
    }


def _line_svg(path: Path, x: np.ndarray, curves: list[tuple[str, np.ndarray]],
              title: str) -> None:
    """Tiny dependency-free SVG line plot for the density overlay."""
    w, hgt, pad = 640, 400, 45
    ys = np.concatenate([c for _, c in curves])
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if y_hi <= y_lo:
        y_hi = y_lo + 1.0
    x_lo, x_hi = float(x[0]), float(x[-1])

    def sx(v):
        return pad + (v - x_lo) / (x_hi - x_lo) * (w - 2 * pad)

    def sy(v):
        return hgt - pad - (v - y_lo) / (y_hi - y_lo) * (hgt - 2 * pad)

    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{hgt}" '
        f'viewBox="0 0 {w} {hgt}">',
        f'<rect width="{w}" height="{hgt}" fill="white"/>',
        f'<text x="{w / 2:.0f}" y="24" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
        f'<line x1="{pad}" y1="{hgt - pad}" x2="{w - pad}" y2="{hgt - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{hgt - pad}" stroke="black"/>',
    ]
    for i, (name, c) in enumerate(curves):
        pts = " ".join(f"{sx(xv):.2f},{sy(yv):.2f}" for xv, yv in zip(x, c))
        col = colors[i % len(colors)]
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{col}" stroke-width="1.5"/>')
        parts.append(f'<text x="{w - pad - 4}" y="{pad + 16 * (i + 1)}" text-anchor="end" '
                     f'font-family="sans-serif" font-size="12" fill="{col}">{name}</text>')
    parts.append(f'<text x="{pad}" y="{hgt - pad + 18}" font-family="sans-serif" '
                 f'font-size="11">{x_lo:.3g}</text>')
    parts.append(f'<text x="{w - pad}" y="{hgt - pad + 18}" text-anchor="end" '
                 f'font-family="sans-serif" font-size="11">{x_hi:.3g}</text>')
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def run_pipeline(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                 echo=print) -> Path:
    """Execute all configured stages, returning the output directory.

    If a stage raises, whatever partial artifacts exist are left in place
    and the manifest records status "failed" with the error message; the
    exception then propagates so callers map it to an exit code.
    """
    out = Path(out_dir if out_dir is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    summary: dict = {"label": cfg.label}
    exc: Exception | None = None
    try:
        _run_stages(cfg, out, files, summary, echo)
        status, error = "ok", None
    except (ConfigError, NumericalError) as e:
        exc = e
        status, error = "failed", f"{type(e).__name__}: {e}"
        echo(f"pipeline failed: {error}")
    manifest = {
        "schema": SCHEMA_VERSION,
        "status": status,
        "error": error,
        "config": cfg.raw,
        "summary": summary,
        "artifacts": {f.relative_to(out).as_posix(): _sha256(f) for f in files},
    }
    _json_dump(out / "manifest.json", manifest)
    echo(f"wrote {out / 'manifest.json'} (status: {status})")
    if exc is not None:
        raise exc
    return out


def _run_stages(cfg: ExperimentConfig, out: Path, files: list[Path],
                summary: dict, echo) -> None:
    problem = cfg.problem()

    echo(f"[1/6] assumption audit for {problem.label!r}")
    audit = check_assumptions(problem, default_grid(problem.d))
    _json_dump(out / "assumptions.json", {
        "passes": audit.passes,
        "holder_seminorm": audit.holder.seminorm,
        "holder_weighted_sup": audit.holder.weighted_sup,
        "theta": audit.holder.theta,
        "sigma_derivative_sups": list(audit.sigma_derivative_sups),
        "inv_a_sup": audit.inv_a_sup,
    })
    files.append(out / "assumptions.json")
    summary["assumptions_pass"] = all(audit.passes.values())

    echo("[2/6] resolvent solve")
    lam, sol, candidates = _resolve(cfg, problem)
    res_dir = out / "resolvent"
    save_solution(sol, res_dir)
    files.extend([res_dir / "solution.csv", res_dir / "solution.json"])
    summary.update(lam=lam, c_lambda=sol.c_lambda, residual_sup=sol.residual_sup,
                   iterations=sol.iterations)
    echo(f"      lambda={lam:g} c={sol.c_lambda:.4f} residual={sol.residual_sup:.2e}")

    echo("[3/6] transform certificates")
    tr = build_transform(sol, problem)
    diffeo = verify_diffeo(tr)
    ellip = verify_ellipticity(tr)
    _json_dump(out / "transform.json", {
        "diffeo": _diffeo_dict(diffeo),
        "ellipticity": {"c_min": ellip.c_min, "c_max": ellip.c_max,
                        "n_points": ellip.n_points},
        "valid_box": [tr.valid_lo.tolist(), tr.valid_hi.tolist()],
        "image_box": [tr.image_lo.tolist(), tr.image_hi.tolist()],
    })
    files.append(out / "transform.json")
    summary["diffeo_accepted"] = bool(diffeo.accepted)
    summary["ellipticity_c_min"] = ellip.c_min
    if not diffeo.accepted:
        raise NumericalError("transform rejected by the diffeomorphism audit")

    sim = cfg.simulate_cfg
    echo(f"[4/6] coupled simulation: {sim['n_paths']} paths, dt={sim['dt']}")
    ens = fs.simulate_equivalent_pair(problem, tr, n_paths=int(sim["n_paths"]),
                                      dt=float(sim["dt"]), seed=int(sim["seed"]))
    _savetxt(out / "samples.csv", {
        "x_direct": ens.x_direct[:, 0], "y": ens.y[:, 0],
        "x_from_y": ens.x_from_y[:, 0], "y_from_x": ens.y_from_x[:, 0],
        "escaped": ens.escaped.astype(float),
    })
    files.append(out / "samples.csv")
    summary["n_escaped"] = ens.n_escaped

    echo("[5/6] density checks")
    den = cfg.density_cfg
    grid = np.linspace(float(den["lo"]), float(den["hi"]), int(den["n"]))
    rho_x = dn.kde(ens.kept(ens.x_direct), grid)
    rho_xy = dn.kde(ens.kept(ens.x_from_y), grid)
    pad_y = float(np.abs(tr.phi(grid[[0, -1], None]) - grid[[0, -1], None]).max())
    grid_y = np.linspace(grid[0] - pad_y, grid[-1] + pad_y, int(den["n"]))
    rho_y = dn.kde(ens.kept(ens.y), grid_y)
    ks = dn.ks_distance(ens.kept(ens.x_direct), ens.kept(ens.x_from_y))
    cov = dn.change_of_variables_check(rho_x, rho_y, tr)
    _savetxt(out / "density.csv", {
        "x": grid, "rho_x_direct": rho_x.values, "rho_x_from_y": rho_xy.values,
        "pushforward_rho_y": cov.pushforward,
    })
    files.append(out / "density.csv")
    _json_dump(out / "checks.json", {
        "ks": {"statistic": ks.statistic, "threshold": ks.threshold,
               "passed": ks.passed, "n_a": ks.n_a, "n_b": ks.n_b},
        "change_of_variables": {"l1": cov.l1, "sup": cov.sup},
        "escaped": ens.n_escaped,
        "kde_bandwidths": {"x": rho_x.bandwidth, "y": rho_y.bandwidth},
    })
    files.append(out / "checks.json")
    summary["ks_statistic"] = ks.statistic
    summary["cov_l1"] = cov.l1
    _line_svg(out / "density_overlay.svg", grid,
              [("direct", rho_x.values), ("via transform", rho_xy.values),
               ("pushforward", cov.pushforward)],
              f"terminal density, {cfg.label}")
    files.append(out / "density_overlay.svg")
    echo(f"      ks={ks.statistic:.4f} (threshold {ks.threshold:.4f}), "
         f"change-of-variables L1={cov.l1:.4f}")

    echo("[6/6] optional flow stages")
    if cfg.flow_cfg is not None:
        n_flow = int(cfg.flow_cfg.get("n_paths", 2000))
        G = cfg.functional()
        rep = fs.nondegeneracy_ensemble(problem, tr, n_paths=n_flow,
                                        dt=float(sim["dt"]),
                                        seed=int(sim["seed"]), G=G)
        _json_dump(out / "flow.json", {
            "n_paths": rep.n_paths,
            "min_norm_x": rep.min_norm_x,
            "n_degenerate": rep.n_degenerate,
            "n_escaped": rep.n_escaped,
            "threshold": rep.threshold,
            "functional": cfg.functional_cfg,
        })
        files.append(out / "flow.json")
        summary["min_norm_x"] = rep.min_norm_x
        summary["n_degenerate"] = rep.n_degenerate
    if cfg.nv_cfg is not None:
        nv_cfg = cfg.nv_cfg
        n_steps = int(round(problem.horizon / float(sim["dt"])))
        dt = problem.horizon / n_steps
        kind = nv_cfg.get("functional", "transform_terminal")
        if kind == "brownian_terminal":
            resim = fs.brownian_terminal_functional()
        elif kind == "transform_terminal":
            resim = fs.transform_terminal_functional(problem, tr, dt,
                                                     G=cfg.functional())
        else:
            raise ConfigError(f"nv: unknown functional {kind!r}")
        z_grid = np.linspace(float(nv_cfg.get("z_lo", -3.0)),
                             float(nv_cfg.get("z_hi", 3.0)),
                             int(nv_cfg.get("n", 121)))
        nv = dn.nourdin_viens_density(
            resim, n_paths=int(nv_cfg.get("n_paths", sim["n_paths"])),
            n_steps=n_steps, dt=dt, z_grid=z_grid,
            n_mehler=int(nv_cfg.get("n_mehler", 8)), seed=int(sim["seed"]))
        _savetxt(out / "nv.csv", {
            "z": nv.z_grid, "x": nv.x_grid, "g": nv.g, "density": nv.density,
        })
        files.append(out / "nv.csv")
        summary["nv_mean"] = nv.mean


@dataclass(frozen=True)
class VerifyReport:
    checks: list        # (name, passed, detail) triples

    @property
    def all_passed(self) -> bool:
        return all(ok for _, ok, _ in self.checks)


def verify_pipeline(cfg: ExperimentConfig, n_paths: int = 2000,
                    dt: float = 1e-3, echo=print) -> VerifyReport:
    """Reduced-scale self-check of the whole chain for one config.

    Runs every stage at a size small enough for a pre-merge gate and
    returns pass/fail rows instead of artifacts.
    """
    checks: list[tuple[str, bool, str]] = []

    def add(name, ok, detail):
        checks.append((name, bool(ok), detail))
        echo(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")

    problem = cfg.problem()
    audit = check_assumptions(problem, default_grid(problem.d))
    add("assumptions", all(audit.passes.values()), f"{audit.passes}")

    lam, sol, _ = _resolve(cfg, problem)
    add("resolvent_residual", sol.residual_sup < 1e-4,
        f"lambda={lam:g} residual={sol.residual_sup:.2e}")
    add("contraction", sol.c_lambda < 1.0, f"c={sol.c_lambda:.4f}")

    tr = build_transform(sol, problem)
    diffeo = verify_diffeo(tr)
    add("diffeo", diffeo.accepted and diffeo.round_trip_sup < 1e-8,
        f"roundtrip={diffeo.round_trip_sup:.2e} lower={diffeo.lower_bound_dphi:.4f}")
    ellip = verify_ellipticity(tr)
    add("ellipticity", ellip.c_min > 0.0,
        f"c_min={ellip.c_min:.4f} c_max={ellip.c_max:.4f}")

    ens = fs.simulate_equivalent_pair(problem, tr, n_paths=n_paths, dt=dt,
                                      seed=int(cfg.simulate_cfg["seed"]))
    ks = dn.ks_distance(ens.kept(ens.x_direct), ens.kept(ens.x_from_y))
    add("coupled_ks", ks.passed,
        f"ks={ks.statistic:.4f} threshold={ks.threshold:.4f} escaped={ens.n_escaped}")

    if problem.d == 1 and problem.k == 1:
        from .wiener import brownian_grid
        n_steps = int(round(problem.horizon / dt))
        bg = brownian_grid(n_steps=n_steps, dt=problem.horizon / n_steps, k=1,
                           seed=int(cfg.simulate_cfg["seed"]) + 1)
        tp = fs.transform_path(problem, tr, bg)
        jy, jyi = fs.jacobian_closed_form(tr, tp)
        jv = fs.jacobian_variational(tr, tp)
        gap = abs(jy[-1] - jv[-1]) / max(abs(jy[-1]), 1e-12)
        add("jacobian_routes", gap < 0.05, f"terminal rel gap={gap:.2e}")

        t1, t2 = 0.25 * problem.horizon, 0.75 * problem.horizon
        chk = fs.malliavin_fd_check(problem, tr, bg, t1, t2)
        add("malliavin_fd", (not chk.discriminating) or chk.rel_gap < 0.05,
            f"rel gap={chk.rel_gap:.2e} discriminating={chk.discriminating}")

        rep = fs.nondegeneracy_ensemble(problem, tr, n_paths=min(500, n_paths),
                                        dt=dt, seed=int(cfg.simulate_cfg["seed"]))
        add("nondegeneracy", rep.n_degenerate == 0 and rep.min_norm_x > 0,
            f"min={rep.min_norm_x:.4e} degenerate={rep.n_degenerate}")
    return VerifyReport(checks=checks)
