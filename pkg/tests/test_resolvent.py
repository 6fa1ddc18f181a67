import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zvonkin.catalog import linear_problem, problem_from_config, rough_problem
from zvonkin.errors import ConfigError, NumericalError
from zvonkin.resolvent import (apply_kolmogorov, lambda_sweep, load_solution,
                               save_solution, select_lambda,
                               solve_resolvent_fd, solve_resolvent_mc)

# closed forms for b = beta x, sigma = s, lambda = 10, beta = 1:
#   psi(x) = x / 9,  psi' = 1/9,  c = 1/9
PSI_SLOPE = 1.0 / 9.0


def _inner_grid(sol, n=1601):
    return np.linspace(sol.inner_lo[0], sol.inner_hi[0], n)[:, None]


def test_linear_psi_matches_closed_form(lin_solution):
    xs = _inner_grid(lin_solution)
    err = np.abs(lin_solution.psi(xs)[:, 0] - PSI_SLOPE * xs[:, 0])
    assert err.max() < 1e-4


def test_linear_dpsi_is_constant_slope(lin_solution):
    xs = _inner_grid(lin_solution, n=401)
    dps = lin_solution.dpsi(xs)[:, 0, 0]
    np.testing.assert_allclose(dps, PSI_SLOPE, atol=5e-5)


def test_linear_contraction_factor(lin_solution):
    assert lin_solution.c_lambda == pytest.approx(PSI_SLOPE, rel=1e-5)


def test_residual_is_small_on_inner_box(lin_solution, rough_solution):
    assert lin_solution.residual_sup < 1e-4
    assert rough_solution.residual_sup < 1e-4


def test_solution_solves_the_equation_independently(rough_prob, rough_solution):
    # plug psi back through an independent centered stencil: lam psi - L psi = b
    lpsi = apply_kolmogorov(rough_prob, rough_solution.psi)
    xs = np.linspace(rough_solution.inner_lo[0], rough_solution.inner_hi[0],
                     801)[:, None]
    lhs = rough_solution.lam * rough_solution.psi(xs) - lpsi(xs)
    rhs = rough_prob.drift(xs)
    assert np.abs(lhs - rhs).max() < 1e-4


def test_monte_carlo_resolvent_agrees(rough_prob, rough_solution):
    x = np.array([0.5])
    est = solve_resolvent_mc(rough_prob, 10.0, x, n_paths=4000, dt=1e-3, seed=2)
    fd = rough_solution.psi(x[None, :])[0, 0]
    gap = abs(est.estimate[0] - fd)
    assert gap < 4 * est.stderr[0] + 2e-3


def test_monte_carlo_guards():
    prob = rough_problem()
    with pytest.raises(ConfigError):
        solve_resolvent_mc(prob, 10.0, np.array([[0.5]]), n_paths=50)
    with pytest.raises(ConfigError):
        solve_resolvent_mc(prob, 10.0, np.array([[0.5]]), t_max=0.1)


def test_sweep_is_strictly_decreasing(rough_prob):
    sweep = lambda_sweep(rough_prob, [10.0, 20.0, 40.0], radius=6.0, h=0.02)
    assert sweep.strictly_decreasing
    assert sweep.c_lambdas[0] == pytest.approx(0.0724, abs=5e-3)


def test_select_lambda_picks_smallest_passing(rough_prob):
    lam, sol = select_lambda(rough_prob, candidates=(10.0, 20.0), c_max=0.5,
                             radius=6.0, h=0.02)
    assert lam == 10.0
    assert sol.c_lambda < 0.5


def test_select_lambda_exhausts(rough_prob):
    with pytest.raises(NumericalError, match="no lambda"):
        select_lambda(rough_prob, candidates=(10.0,), c_max=1e-4,
                      radius=6.0, h=0.02)


def test_small_lambda_stalls_with_diagnostic(rough_prob):
    # fine grid + tiny lambda: Gauss-Seidel cannot converge in the budget
    with pytest.raises(NumericalError, match="lambda too small"):
        solve_resolvent_fd(rough_prob, 0.05, radius=6.0, h=0.02, max_iter=6_000)


def test_contraction_converges_under_refinement(lin_problem, rough_prob):
    # linear drift: psi is exactly linear, so any grid nails the closed form
    for h in (0.04, 0.02):
        c = solve_resolvent_fd(lin_problem, 10.0, radius=8.0, h=h).c_lambda
        assert abs(c - PSI_SLOPE) < 1e-6
    # curved drift: successive h-halvings give shrinking Cauchy differences
    c8 = solve_resolvent_fd(rough_prob, 10.0, radius=6.0, h=0.08).c_lambda
    c4 = solve_resolvent_fd(rough_prob, 10.0, radius=6.0, h=0.04).c_lambda
    c2 = solve_resolvent_fd(rough_prob, 10.0, radius=6.0, h=0.02).c_lambda
    assert abs(c4 - c2) < abs(c8 - c4)


def test_grid_function_snaps_to_nodes(lin_solution):
    gf = lin_solution.psi
    node = gf.axis_nodes(0)[37]
    exact = gf.values[37]
    assert gf(np.array([[node]]))[0, 0] == exact


def test_grid_function_rejects_outside_domain(lin_solution):
    far = lin_solution.psi.hi[0] + 1.0
    with pytest.raises(ConfigError, match="outside"):
        lin_solution.psi(np.array([[far]]))


def test_save_load_round_trip(tmp_path, rough_solution):
    save_solution(rough_solution, tmp_path)
    back = load_solution(tmp_path)
    np.testing.assert_array_equal(back.psi.values, rough_solution.psi.values)
    assert back.lam == rough_solution.lam
    assert back.c_lambda == pytest.approx(rough_solution.c_lambda, rel=1e-12)
    assert back.h == rough_solution.h
    xs = _inner_grid(rough_solution, n=101)
    np.testing.assert_allclose(back.psi(xs), rough_solution.psi(xs), atol=1e-14)


def test_two_dimensional_closed_form():
    # decoupled linear drift: psi_i = beta_i x_i / (lam - beta_i)
    prob = problem_from_config({
        "d": 2, "k": 2, "x0": [0.0, 0.0], "horizon": 1.0,
        "drift": {"name": "linear", "beta": 1.0},
        "diffusion": {"name": "constant", "value": 1.0},
    })
    sol = solve_resolvent_fd(prob, 20.0, radius=3.0, h=0.05, pad=2.0,
                             inner_buffer=1.0)
    ax = np.linspace(sol.inner_lo[0], sol.inner_hi[0], 21)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([xx.ravel(), yy.ravel()], axis=-1)
    psi = sol.psi(pts)
    expected = pts / 19.0
    assert np.abs(psi - expected).max() < 5e-4
    assert sol.c_lambda == pytest.approx(1 / 19.0, abs=5e-4)


def test_mc_estimate_reproducible(rough_prob):
    x = np.array([[0.0]])
    a = solve_resolvent_mc(rough_prob, 10.0, x, n_paths=500, dt=2e-3, seed=7)
    b = solve_resolvent_mc(rough_prob, 10.0, x, n_paths=500, dt=2e-3, seed=7)
    np.testing.assert_array_equal(a.estimate, b.estimate)


@settings(max_examples=8)
@given(lam=st.floats(min_value=8.0, max_value=60.0))
def test_contraction_in_unit_interval(lam):
    prob = rough_problem()
    sol = solve_resolvent_fd(prob, lam, radius=5.0, h=0.05)
    assert 0.0 < sol.c_lambda < 1.0
    # resolvent scaling: sup |psi| <= sup |b| / (lam (1 - c)), with the
    # drift sup taken over the full solver box (paths see the padding)
    xs = np.linspace(sol.inner_lo[0], sol.inner_hi[0], 201)[:, None]
    box = np.linspace(sol.psi.lo[0], sol.psi.hi[0], 401)[:, None]
    b_sup = np.abs(prob.drift(box)).max()
    assert np.abs(sol.psi(xs)).max() <= b_sup / (lam * (1 - sol.c_lambda)) * 1.05
