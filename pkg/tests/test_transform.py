"""Transform checks against the linear closed forms.

With drift beta*x and unit diffusion the corrector is beta*x/(lam - beta),
so every map in the transform has an explicit formula to pin down:
phi(x) = x*lam/(lam - beta), its inverse is y*(lam - beta)/lam, the pushed
drift is beta*y and the pushed diffusion is the constant lam/(lam - beta).
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zvonkin.catalog import linear_problem, problem_from_config
from zvonkin.errors import NumericalError
from zvonkin.resolvent import solve_resolvent_fd
from zvonkin.transform import build_transform, verify_diffeo, verify_ellipticity

BETA = 1.0
LAM = 10.0
SLOPE = LAM / (LAM - BETA)            # phi'(x) = 10/9 everywhere


def grid_in_image(t, n=201):
    return np.linspace(t.image_lo[0] + 0.01, t.image_hi[0] - 0.01, n)[:, None]


def test_forward_map_matches_closed_form(lin_transform):
    x = np.linspace(-8.0, 8.0, 321)[:, None]
    assert np.abs(lin_transform.phi(x) - SLOPE * x).max() < 2e-3
    dphi = lin_transform.dphi(x)
    assert np.abs(dphi - SLOPE).max() < 1e-4


def test_inverse_point_oracles(lin_transform):
    # phi^{-1}(y) = 0.9 y: two hand-checked points inside the image box
    got = lin_transform.inverse(np.array([[1.0], [9.0]]))
    assert abs(got[0, 0] - 0.9) < 2e-4
    assert abs(got[1, 0] - 8.1) < 2e-3


def test_inverse_roundtrip_tight(lin_transform):
    y = grid_in_image(lin_transform, 401)
    x = lin_transform.inverse(y)
    assert np.abs(lin_transform.phi(x) - y).max() < 1e-10


def test_inverse_rejects_points_outside_envelope(lin_transform):
    with pytest.raises(NumericalError, match="outside"):
        lin_transform.inverse(np.array([[20.0]]))


def test_pushed_drift_is_linear_in_y(lin_transform):
    y = grid_in_image(lin_transform)
    bt = lin_transform.btilde(y)
    assert np.abs(bt - BETA * y).max() < 2e-3


def test_pushed_diffusion_is_constant(lin_transform):
    y = grid_in_image(lin_transform)
    st_ = lin_transform.sigmatilde(y)
    assert st_.shape == (y.shape[0], 1, 1)
    assert np.abs(st_ - SLOPE).max() < 1e-4


def test_coefficient_derivatives_match_slopes(lin_transform):
    y = grid_in_image(lin_transform, 51)
    dbt, dst = lin_transform.coefficient_derivs(y)
    assert dbt.shape == (51, 1, 1)
    assert dst.shape == (51, 1, 1, 1)
    assert np.abs(dbt - BETA).max() < 1e-3
    assert np.abs(dst).max() < 1e-3


def test_diffeo_audit_accepts(lin_transform):
    rep = verify_diffeo(lin_transform)
    assert rep.accepted
    assert rep.round_trip_sup < 1e-8
    assert rep.min_det_dphi > 0
    # phi' = 1 + psi' must stay above 1 - c everywhere on the audit grid
    assert rep.lower_bound_dphi >= 1.0 - lin_transform.c_lambda - 1e-3
    assert abs(rep.sup_dphi - SLOPE) < 1e-3


def test_ellipticity_of_pushed_diffusion(lin_transform):
    rep = verify_ellipticity(lin_transform)
    assert rep.c_min > 0
    assert abs(rep.c_min - SLOPE**2) < 1e-3
    assert abs(rep.c_max - SLOPE**2) < 1e-3


def test_build_rejects_supercritical_contraction():
    # beta=4, lam=5: the certified contraction factor lands far above one
    prob = linear_problem(beta=4.0, s=1.0, x0=0.0, horizon=1.0)
    sol = solve_resolvent_fd(prob, 5.0, radius=3.0, h=0.02)
    assert sol.c_lambda >= 1.0
    with pytest.raises(NumericalError, match="not a certified diffeomorphism"):
        build_transform(sol, prob)


def test_valid_and_image_boxes_nest(lin_transform):
    t = lin_transform
    assert t.valid_lo[0] < t.valid_hi[0]
    # monotone phi: image endpoints are the endpoint images
    lo = t.phi(np.array([[t.valid_lo[0]]]))[0, 0]
    hi = t.phi(np.array([[t.valid_hi[0]]]))[0, 0]
    assert abs(lo - t.image_lo[0]) < 1e-12
    assert abs(hi - t.image_hi[0]) < 1e-12


def test_rough_transform_certified(rough_transform):
    rep = verify_diffeo(rough_transform)
    assert rep.accepted
    assert rep.c_lambda < 0.1
    ell = verify_ellipticity(rough_transform)
    # sigma = 1 + 0.3 sin x and |Dpsi| <= c give (1-c)^2 * inf(a) as a floor
    floor = (1.0 - rep.c_lambda) ** 2 * 0.49
    assert ell.c_min >= floor - 1e-3


def test_two_dimensional_transform_smoke():
    prob = problem_from_config({
        "d": 2, "k": 2, "x0": [0.0, 0.0], "horizon": 1.0,
        "drift": {"name": "linear", "beta": 1.0},
        "diffusion": {"name": "constant", "value": 1.0},
    })
    sol = solve_resolvent_fd(prob, 20.0, radius=3.0, h=0.05, pad=2.0,
                             inner_buffer=1.0)
    t = build_transform(sol, prob)
    ax = np.linspace(t.image_lo[0] + 0.05, t.image_hi[0] - 0.05, 9)
    gy = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    x = t.inverse(gy)
    assert np.abs(t.phi(x) - gy).max() < 1e-10
    # decoupled coordinates: pushed drift is y itself, pushed diffusion 20/19
    assert np.abs(t.btilde(gy) - gy).max() < 5e-3
    st_ = t.sigmatilde(gy)
    assert np.abs(st_ - (20.0 / 19.0) * np.eye(2)).max() < 5e-3
    assert verify_diffeo(t).accepted


@settings(max_examples=25)
@given(st.floats(min_value=-9.8, max_value=9.8))
def test_roundtrip_property(lin_transform, yv):
    y = np.array([[yv]])
    x = lin_transform.inverse(y)
    assert abs(lin_transform.phi(x)[0, 0] - yv) < 1e-9
