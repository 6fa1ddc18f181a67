import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zvonkin.catalog import (linear_problem, make_diffusion, make_drift,
                             make_functional, problem_from_config,
                             rough_problem)
from zvonkin.errors import ConfigError
from zvonkin.model import (FunctionalG, SdeProblem, VectorField,
                           check_assumptions, default_grid,
                           estimate_holder_seminorm)


def test_vector_field_validates_shapes():
    f = make_drift({"name": "linear", "beta": 2.0}, d=1)
    out = f(np.array([[1.0], [2.0]]))
    assert out.shape == (2, 1)
    np.testing.assert_allclose(out[:, 0], [2.0, 4.0])
    with pytest.raises(ConfigError):
        f(np.zeros((3, 2)))        # wrong input dimension


def test_diffusion_shape_is_matrix_valued():
    s = make_diffusion({"name": "sin_modulated", "base": 1.0, "amp": 0.3}, d=1, k=1)
    out = s(np.zeros((4, 1)))
    assert out.shape == (4, 1, 1)
    np.testing.assert_allclose(out, 1.0)


# |x|^{1/2} against theta = 1/2: the pair (0, x) realizes ratio exactly 1,
# every other pair is strictly below it
def test_holder_seminorm_sqrt_drift_oracle():
    f = make_drift({"name": "sqrt_abs"}, d=1)
    grid = default_grid(1, radius=2.0)
    rep = estimate_holder_seminorm(f, 0.5, grid)
    assert rep.seminorm == pytest.approx(1.0, rel=1e-6)
    assert rep.theta == 0.5
    assert rep.pair_count > 0


# linear drift beta*x at theta = 1/2: ratio beta*|x-y|^{1/2}, maximized at
# unit separation, which the 0.01-spaced grid contains exactly
def test_holder_seminorm_linear_drift_oracle():
    beta = 1.7
    f = make_drift({"name": "linear", "beta": beta}, d=1)
    rep = estimate_holder_seminorm(f, 0.5, default_grid(1, radius=3.0))
    assert rep.seminorm == pytest.approx(beta, rel=1e-9)


def test_holder_seminorm_rejects_degenerate_grid():
    f = make_drift({"name": "zero"}, d=1)
    with pytest.raises(ConfigError):
        estimate_holder_seminorm(f, 0.5, np.zeros((1, 1)))


@given(scale=st.floats(min_value=0.1, max_value=10.0,
                       allow_nan=False, allow_infinity=False))
def test_holder_seminorm_scales_linearly(scale):
    base = make_drift({"name": "sqrt_abs"}, d=1)
    scaled = make_drift({"name": "sqrt_abs", "scale": scale}, d=1)
    grid = default_grid(1, radius=1.0, spacing=0.05)
    a = estimate_holder_seminorm(base, 0.5, grid).seminorm
    b = estimate_holder_seminorm(scaled, 0.5, grid).seminorm
    assert b == pytest.approx(scale * a, rel=1e-9)


def test_check_assumptions_rough_testbed(rough_prob):
    rep = check_assumptions(rough_prob, default_grid(1, radius=6.0))
    assert rep.passes == {"holder_drift": True, "diffusion_c3": True,
                          "inverse_diffusion_bounded": True}
    # sigma = 1 + 0.3 sin x: first three derivative sups are all 0.3
    np.testing.assert_allclose(rep.sigma_derivative_sups, 0.3, rtol=1e-3)
    # inf a = 0.49 on the grid, so sup of a^{-1} is 1/0.49
    assert rep.inv_a_sup == pytest.approx(1 / 0.49, rel=1e-3)


def test_check_assumptions_flags_degenerate_diffusion():
    prob = problem_from_config({
        "d": 1, "k": 1, "x0": [1.0], "horizon": 1.0,
        "drift": {"name": "zero"},
        "diffusion": {"name": "linear", "scale": 1.0},   # vanishes at x = 0
    })
    rep = check_assumptions(prob, default_grid(1, radius=2.0))
    assert not rep.passes["inverse_diffusion_bounded"]
    assert rep.offending_point is not None
    assert abs(rep.offending_point[0]) < 0.02


def test_functional_lower_bound_audit_names_point():
    G = make_functional({"name": "sin_shift", "amp": 0.4})
    G.check_lower_bound(0.0, np.linspace(-3, 3, 50))    # bound 0.6 holds
    bad = FunctionalG(fn=G.fn, dx=G.dx, lower_bound_claimed=0.99, label="bad")
    with pytest.raises(ConfigError, match="at x ="):
        bad.check_lower_bound(0.0, np.linspace(-3, 3, 50))


def test_problem_validates_x0_shape():
    with pytest.raises(ConfigError):
        problem_from_config({"d": 2, "k": 1, "x0": [0.0], "horizon": 1.0})


def test_catalog_rejects_unknown_names():
    with pytest.raises(ConfigError):
        make_drift({"name": "cubic"}, d=1)
    with pytest.raises(ConfigError):
        make_drift({"name": "linear", "beta": 1.0, "typo": 2}, d=1)


def test_a_matrix_is_sigma_sigma_t(lin_problem):
    a = lin_problem.a(np.array([[0.3], [-2.0]]))
    np.testing.assert_allclose(a, 1.0)
    assert a.shape == (2, 1, 1)


def test_default_grid_spacing_by_dimension():
    g1 = default_grid(1, radius=1.0)
    assert g1.shape[1] == 1
    assert np.diff(g1[:, 0]).max() == pytest.approx(0.01)
    g2 = default_grid(2, radius=1.0)
    assert g2.shape[1] == 2
