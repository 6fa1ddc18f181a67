"""End-to-end acceptance gate.

Eleven numbered criteria, one test each, every one printing a PASS/FAIL line
through the `acceptance` fixture.  Scales and seeds are pinned: these are the
numbers the package commits to, not a best-case run.  The linear testbed
(drift x, unit noise, lambda 10) supplies closed forms; the rough testbed
(drift sqrt|x|, noise 1 + 0.3 sin x) exercises everything with no formula
available, checked against internal cross-routes instead.
"""

import json
import time

import numpy as np

from zvonkin.catalog import (
    brownian_problem,
    linear_problem,
    make_functional,
    rough_problem,
)
from zvonkin.density import (
    change_of_variables_check,
    kde,
    ks_distance,
    nourdin_viens_density,
)
from zvonkin.flowsim import (
    brownian_terminal_functional,
    jacobian_closed_form,
    jacobian_variational,
    malliavin_derivative_x,
    malliavin_derivative_y,
    malliavin_fd_check,
    nondegeneracy_ensemble,
    simulate_equivalent_pair,
    transform_path,
)
from zvonkin.resolvent import lambda_sweep, solve_resolvent_fd
from zvonkin.transform import build_transform, verify_diffeo, verify_ellipticity
from zvonkin.wiener import BrownianGrid, brownian_grid, coarsen_increments

KS_SEEDS = (1, 2, 3, 4, 5)


def summary_json(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode()


def ks_trial(problem, transform, seed: int) -> dict:
    ens = simulate_equivalent_pair(problem, transform, n_paths=10_000,
                                   dt=1e-3, seed=seed)
    rep = ks_distance(ens.kept(ens.x_direct), ens.kept(ens.x_from_y))
    return {
        "seed": seed,
        "n_paths": ens.n_paths,
        "n_escaped": ens.n_escaped,
        "ks_statistic": rep.statistic,
        "threshold": rep.threshold,
        "passed": rep.passed,
    }


def test_criterion_01_resolvent_linear_oracle(acceptance):
    t0 = time.time()
    prob = linear_problem(beta=1.0, s=1.0, x0=0.5, horizon=1.0)
    sol = solve_resolvent_fd(prob, 10.0, radius=10.0, h=0.01)
    elapsed = time.time() - t0
    x = np.linspace(sol.inner_lo[0], sol.inner_hi[0], 1601)[:, None]
    err = float(np.abs(sol.psi(x) - x / 9.0).max())
    ok = err < 1e-3 and sol.residual_sup < 1e-3 and elapsed < 5.0
    acceptance("C01", ok,
               f"sup|psi - x/9| = {err:.2e}, residual = {sol.residual_sup:.2e}, "
               f"{elapsed:.1f}s")


def test_criterion_02_contraction_decay(acceptance):
    lin = linear_problem(beta=1.0, s=1.0, x0=0.5, horizon=1.0)
    sweep = lambda_sweep(lin, (5.0, 10.0, 20.0, 40.0), radius=8.0, h=0.02)
    oracle = np.array([1 / 4, 1 / 9, 1 / 19, 1 / 39])
    rel = np.abs(np.array(sweep.c_lambdas) - oracle) / oracle
    rough = rough_problem()
    rsweep = lambda_sweep(rough, (10.0, 20.0, 40.0, 80.0), radius=6.0, h=0.02)
    ok = bool(rel.max() < 0.02) and rsweep.strictly_decreasing
    acceptance("C02", ok,
               f"linear sweep max rel err = {rel.max():.2e}; rough sweep "
               f"{[round(c, 5) for c in rsweep.c_lambdas]} decreasing = "
               f"{rsweep.strictly_decreasing}")


def test_criterion_03_diffeomorphism(acceptance, lin_transform,
                                     rough_transform):
    worst_rt, worst_floor, ok = 0.0, np.inf, True
    for t in (lin_transform, rough_transform):
        rep = verify_diffeo(t)
        worst_rt = max(worst_rt, rep.round_trip_sup)
        floor = rep.min_det_dphi - (1.0 - rep.c_lambda - 1e-3)
        worst_floor = min(worst_floor, floor)
        ok = ok and rep.accepted and rep.n_points == 1000 \
            and rep.round_trip_sup < 1e-10 and rep.min_det_dphi > 0 \
            and rep.min_det_dphi >= 1.0 - rep.c_lambda - 1e-3
    acceptance("C03", ok,
               f"round trip sup = {worst_rt:.2e}, det margin = {worst_floor:.4f}")


def test_criterion_04_uniform_ellipticity(acceptance, rough_transform):
    rep = verify_ellipticity(rough_transform)
    floor = (1.0 - rough_transform.c_lambda) ** 2 * 0.49 - 1e-3
    ok = rep.c_min >= floor and np.isfinite(rep.c_max)
    acceptance("C04", ok,
               f"c_min = {rep.c_min:.4f} >= floor {floor:.4f}, "
               f"c_max = {rep.c_max:.4f}")


def test_criterion_05_law_equivalence(acceptance, rough_prob, rough_transform):
    trials = [ks_trial(rough_prob, rough_transform, s) for s in KS_SEEDS]
    n_pass = sum(t["passed"] for t in trials)
    stats = [round(t["ks_statistic"], 4) for t in trials]
    ok = n_pass >= 4
    acceptance("C05", ok,
               f"KS statistics {stats} vs threshold "
               f"{trials[0]['threshold']:.4f}: {n_pass}/5 seeds pass")


def test_criterion_06_jacobian_cross_route(acceptance, rough_prob,
                                           rough_transform):
    # refine the SAME driving path: the fine grid is drawn once and summed
    # pairwise to the dt = 1e-4 grid, so the halving comparison is per-path
    fine = brownian_grid(20_000, 5e-5, 1, seed=0)
    coarse = BrownianGrid(n_steps=10_000, dt=1e-4, k=1, seed=0, path_index=0,
                          increments=coarsen_increments(fine.increments, 2))
    gaps, unit = [], 0.0
    for bg in (coarse, fine):
        tp = transform_path(rough_prob, rough_transform, bg)
        jy, jy_inv = jacobian_closed_form(rough_transform, tp)
        unit = max(unit, float(np.abs(jy * jy_inv - 1.0).max()))
        jv = jacobian_variational(rough_transform, tp)
        gaps.append(float(np.abs(jy - jv).max() / np.abs(jy).max()))
    ok = gaps[0] <= 0.05 and gaps[1] < gaps[0] and unit < 1e-6
    acceptance("C06", ok,
               f"rel gap {gaps[0]:.2e} -> {gaps[1]:.2e} under dt halving, "
               f"|JY JY^-1 - 1| = {unit:.1e}")


def test_criterion_07_malliavin_derivative(acceptance, lin_problem,
                                           lin_transform, rough_prob,
                                           rough_transform):
    bg = brownian_grid(1000, 1e-3, 1, seed=7)
    tp = transform_path(lin_problem, lin_transform, bg)
    jy, jy_inv = jacobian_closed_form(lin_transform, tp)
    dy = malliavin_derivative_y(lin_transform, tp, jy, jy_inv)
    dx = malliavin_derivative_x(lin_transform, tp, dy)
    oracle = np.exp(1.0 * (1.0 - tp.times))
    rel_row = float((np.abs(dx[-1] - oracle) / oracle).max())

    fd_ou = malliavin_fd_check(lin_problem, lin_transform, bg, 0.2, 0.4)
    bg_r = brownian_grid(1000, 1e-3, 1, seed=7)
    fd_rough = malliavin_fd_check(rough_prob, rough_transform, bg_r, 0.2, 0.4)
    ok = rel_row < 1e-2 and fd_ou.discriminating and fd_ou.rel_gap < 1e-2 \
        and fd_rough.discriminating and fd_rough.rel_gap < 5e-2
    acceptance("C07", ok,
               f"OU row rel err = {rel_row:.2e}; CM finite difference "
               f"rel gap OU = {fd_ou.rel_gap:.2e}, rough = {fd_rough.rel_gap:.2e}")


def test_criterion_08_nondegeneracy(acceptance, rough_prob, rough_transform):
    G = make_functional({"name": "sin_shift", "amp": 0.5})
    rep = nondegeneracy_ensemble(rough_prob, rough_transform, n_paths=10_000,
                                 dt=1e-3, seed=1, G=G)
    kept = ~rep.escaped
    min_g = float(np.nanmin(rep.norms_g))
    ok = rep.min_norm_x > 0 and min_g > 0 and rep.n_degenerate == 0 \
        and kept.sum() == 10_000
    acceptance("C08", ok,
               f"min ||D X_T||^2 = {rep.min_norm_x:.3e}, "
               f"min ||D G||^2 = {min_g:.3e}, degenerate = {rep.n_degenerate}")


def test_criterion_09_change_of_variables(acceptance, rough_prob,
                                          rough_transform):
    ens = simulate_equivalent_pair(rough_prob, rough_transform,
                                   n_paths=100_000, dt=1e-3, seed=1)
    grid = np.linspace(-5.0, 8.0, 521)
    rho_x = kde(ens.kept(ens.x_direct), grid)
    pad = float(np.abs(rough_transform.phi(grid[[0, -1], None])
                       - grid[[0, -1], None]).max())
    grid_y = np.linspace(grid[0] - pad, grid[-1] + pad, 521)
    rho_y = kde(ens.kept(ens.y), grid_y)
    cov = change_of_variables_check(rho_x, rho_y, rough_transform)

    # identity control: zero drift makes phi the identity map exactly
    bprob = brownian_problem()
    bsol = solve_resolvent_fd(bprob, 10.0, radius=8.0, h=0.01)
    btr = build_transform(bsol, bprob)
    bens = simulate_equivalent_pair(bprob, btr, n_paths=100_000,
                                    dt=1.0 / 256, seed=5)
    bgrid = np.linspace(-4.5, 4.5, 451)
    brho_x = kde(bens.kept(bens.x_direct), bgrid)
    brho_y = kde(bens.kept(bens.y), bgrid)
    bcov = change_of_variables_check(brho_x, brho_y, btr)
    ok = cov.l1 < 0.05 and bcov.l1 < 0.02
    acceptance("C09", ok,
               f"L1 gap = {cov.l1:.4f} (rough, n=1e5); identity control "
               f"L1 = {bcov.l1:.2e}")


def test_criterion_10_density_reconstruction(acceptance):
    z = np.linspace(-2.5, 2.5, 201)
    nv = nourdin_viens_density(brownian_terminal_functional(), 100_000, 256,
                               1.0 / 256, z, n_mehler=8, seed=0)
    pdf = np.exp(-0.5 * z ** 2) / np.sqrt(2 * np.pi)
    peak = float(pdf.max())
    sup_err = float(np.abs(nv.density - pdf).max())
    core = np.abs(z) <= 2.0
    g_dev = float(np.abs(nv.g[core] - 1.0).max())
    ok = sup_err < 0.05 * peak and g_dev < 0.10
    acceptance("C10", ok,
               f"density sup err = {sup_err:.4f} (allowed {0.05 * peak:.4f}), "
               f"max |g - 1| on |z|<=2 = {g_dev:.2e}")


def test_criterion_11_reproducibility(acceptance, rough_prob,
                                      rough_transform):
    a = summary_json(ks_trial(rough_prob, rough_transform, KS_SEEDS[0]))
    b = summary_json(ks_trial(rough_prob, rough_transform, KS_SEEDS[0]))
    ok = a == b
    acceptance("C11", ok,
               f"repeated seed-{KS_SEEDS[0]} summary JSON byte-identical: {ok} "
               f"({len(a)} bytes)")
