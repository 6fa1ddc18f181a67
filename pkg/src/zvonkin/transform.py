"""The drift-removing diffeomorphism phi(x) = x + psi(x) and its calculus.

With psi the resolvent solution at a large enough lambda, phi is a C^2
diffeomorphism (certified here by c_lambda = sup |D psi| < 1), and the image
process Y = phi(X) solves an SDE with Lipschitz-in-practice coefficients

    bt(y) = lambda * psi(phi^{-1}(y)),
    st(y) = D phi(phi^{-1}(y)) sigma(phi^{-1}(y)),

whose diffusion matrix B = st st^T inherits uniform ellipticity.  Inversion
is exact Newton against the interpolated phi (tolerance 1e-12 on |phi(x)-y|);
derivatives of the inverse come from the inverse-function theorem, never
from differencing the inverse.  Coefficient derivatives D bt, D st are
centered differences of the evaluators at the grid spacing, since psi is
only grid-known.

All evaluators are only trusted on valid_box (the solver's inner box shrunk
by sup |psi|, so that images and Newton iterates stay on validated ground);
image_box is a certified subset of phi(valid_box).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .model import SdeProblem
from .resolvent import ResolventSolution

__all__ = [
    "ZvonkinTransform",
    "DiffeoReport",
    "EllipticityReport",
    "build_transform",
    "verify_diffeo",
    "verify_ellipticity",
]


@dataclass(frozen=True)
class DiffeoReport:
    sup_dphi: float
    min_det_dphi: float
    lower_bound_dphi: float     # min singular value of D phi over the grid
    sup_dphi_inv: float
    sup_d2phi_inv: float
    round_trip_sup: float
    c_lambda: float
    n_points: int
    accepted: bool


@dataclass(frozen=True)
class EllipticityReport:
    c_min: float
    c_max: float
    n_points: int


class ZvonkinTransform:
    """phi = id + psi with Newton inversion and transformed coefficients."""

    def __init__(self, solution: ResolventSolution, problem: SdeProblem,
                 valid_lo, valid_hi, image_lo, image_hi):
        self.solution = solution
        self.problem = problem
        self.lam = solution.lam
        self.c_lambda = solution.c_lambda
        self.d = problem.d
        self.k = problem.k
        self.h = solution.h
        self.valid_lo = np.asarray(valid_lo, dtype=float)
        self.valid_hi = np.asarray(valid_hi, dtype=float)
        self.image_lo = np.asarray(image_lo, dtype=float)
        self.image_hi = np.asarray(image_hi, dtype=float)
        margin = solution.psi_sup_inner()
        self._envelope_lo = self.valid_lo - margin
        self._envelope_hi = self.valid_hi + margin
        self._eye = np.eye(self.d)

    # -- forward map -------------------------------------------------------

    def phi(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x + self.solution.psi(x)

    def dphi(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._eye + self.solution.dpsi(x)

    # -- inversion ---------------------------------------------------------

    def inverse(self, y: np.ndarray, tol: float = 1e-12, max_iter: int = 100,
                x0: np.ndarray | None = None) -> np.ndarray:
        """Solve phi(x) = y by Newton, warm-startable via x0."""
        y = np.asarray(y, dtype=float)
        if np.any(y < self._envelope_lo - 1e-9) or np.any(y > self._envelope_hi + 1e-9):
            raise NumericalError("out of validated domain: target y outside phi(valid_box) envelope")
        x = np.array(y if x0 is None else x0, dtype=float, copy=True)
        active = np.arange(x.shape[0])
        for _ in range(max_iter):
            try:
                fx = self.phi(x[active]) - y[active]
            except ConfigError as e:
                raise NumericalError(f"out of validated domain: {e}") from e
            err = np.max(np.abs(fx), axis=1)
            good = err <= tol
            if np.all(good):
                return x
            rem = active[~good]
            fx = fx[~good]
            J = self.dphi(x[rem])
            if self.d == 1:
                x[rem, 0] -= fx[:, 0] / J[:, 0, 0]
            else:
                x[rem] -= np.linalg.solve(J, fx[..., None])[..., 0]
            active = rem
        raise NumericalError("Newton non-convergence inverting the transform")

    def dphi_inv_at_y(self, y: np.ndarray, x_hat: np.ndarray | None = None) -> np.ndarray:
        """D(phi^{-1})(y) = (D phi)^{-1} at phi^{-1}(y), by the inverse-function theorem."""
        if x_hat is None:
            x_hat = self.inverse(y)
        J = self.dphi(x_hat)
        if self.d == 1:
            return 1.0 / J
        return np.linalg.inv(J)

    # -- transformed coefficients -------------------------------------------

    def btilde(self, y: np.ndarray, x_hat: np.ndarray | None = None) -> np.ndarray:
        if x_hat is None:
            x_hat = self.inverse(np.asarray(y, dtype=float))
        return self.lam * self.solution.psi(x_hat)

    def sigmatilde(self, y: np.ndarray, x_hat: np.ndarray | None = None) -> np.ndarray:
        if x_hat is None:
            x_hat = self.inverse(np.asarray(y, dtype=float))
        J = self.dphi(x_hat)
        s = self.problem.diffusion(x_hat)
        return np.einsum("nij,njk->nik", J, s)

    def btilde_deriv(self, y: np.ndarray) -> np.ndarray:
        """Centered difference of bt at the grid spacing: (n, d, d)."""
        return self.coefficient_derivs(y)[0]

    def sigmatilde_deriv(self, y: np.ndarray) -> np.ndarray:
        """Centered difference of st at the grid spacing: (n, d, k, d)."""
        return self.coefficient_derivs(y)[1]

    def coefficient_derivs(self, y: np.ndarray, x_warm: np.ndarray | None = None):
        """(D bt, D st) by centered differences sharing the Newton inversions.

        psi is only grid-known, so the step equals the grid spacing; a warm
        start for the inversions keeps this cheap inside stepping loops.
        """
        y = np.asarray(y, dtype=float)
        n = y.shape[0]
        db_cols, ds_cols = [], []
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = self.h
            xp = self.inverse(y + e, x0=x_warm)
            xm = self.inverse(y - e, x0=x_warm)
            db_cols.append((self.btilde(None, x_hat=xp) - self.btilde(None, x_hat=xm))
                           / (2 * self.h))
            ds_cols.append((self.sigmatilde(None, x_hat=xp) - self.sigmatilde(None, x_hat=xm))
                           / (2 * self.h))
        dbt = np.stack(db_cols, axis=-1).reshape((n, self.d, self.d))
        dst = np.stack(ds_cols, axis=-1).reshape((n, self.d, self.k, self.d))
        return dbt, dst


def build_transform(solution: ResolventSolution, problem: SdeProblem) -> ZvonkinTransform:
    """Assemble the transform, rejecting lambdas that cannot certify a diffeo."""
    if problem.d != solution.psi.comp_shape[0]:
        raise ConfigError("solution dimension does not match the problem")
    if not (solution.c_lambda < 1.0):
        raise NumericalError(
            f"lambda too small: c_lambda = {solution.c_lambda:.3f} >= 1, "
            "the transform is not a certified diffeomorphism"
        )
    margin = solution.psi_sup_inner()
    valid_lo = solution.inner_lo + margin
    valid_hi = solution.inner_hi - margin
    if np.any(valid_hi - valid_lo <= 0):
        raise NumericalError("valid box empty: sup|psi| exceeds the inner box half-width")
    if problem.d == 1:
        # phi is strictly increasing (phi' >= 1 - c_lambda > 0), so the image
        # of the interval is exactly the interval between endpoint images
        ends = np.array([[valid_lo[0]], [valid_hi[0]]])
        img = ends + solution.psi(ends)
        t = ZvonkinTransform(solution, problem, valid_lo, valid_hi,
                             img[:1, 0], img[1:, 0])
    else:
        # |psi| <= margin makes [valid_lo + margin, valid_hi - margin] a
        # certified subset of phi(valid_box) (fixed-point argument on x = y - psi(x))
        t = ZvonkinTransform(solution, problem, valid_lo, valid_hi,
                             valid_lo + margin, valid_hi - margin)
        if np.any(t.image_hi - t.image_lo <= 0):
            raise NumericalError("image box empty: sup|psi| too large for the inner box")
    return t


def verify_diffeo(t: ZvonkinTransform, grid: np.ndarray | None = None,
                  fd_step: float = 1e-4, slack: float = 1e-3) -> DiffeoReport:
    """Grid audit of the diffeomorphism certificates.

    Checks det D phi > 0, the singular-value floor 1 - c_lambda (within
    `slack` of interpolation wiggle), bounded inverse derivatives, and the
    Newton round trip.
    """
    if grid is None:
        if t.d == 1:
            grid = np.linspace(t.valid_lo[0], t.valid_hi[0], 1000)[:, None]
        else:
            ax = [np.linspace(t.valid_lo[j], t.valid_hi[j], 32) for j in range(t.d)]
            m = np.meshgrid(*ax, indexing="ij")
            grid = np.stack([mm.ravel() for mm in m], axis=-1)
    grid = np.asarray(grid, dtype=float)

    J = t.dphi(grid)
    dets = np.linalg.det(J)
    svals = np.linalg.svd(J, compute_uv=False)
    sup_dphi = float(svals[:, 0].max())
    lower_bound = float(svals[:, -1].min())
    min_det = float(dets.min())

    y = t.phi(grid)
    x_back = t.inverse(y)
    round_trip = float(np.max(np.abs(x_back - grid)))

    Jinv = np.linalg.inv(J)
    sup_dphi_inv = float(np.linalg.svd(Jinv, compute_uv=False)[:, 0].max())

    # second derivative of the inverse by differencing the exact first
    # derivative of the inverse (not by differencing the inverse itself);
    # clip so the stencil stays inside the certified image box
    y_in = np.clip(y, t.image_lo + fd_step, t.image_hi - fd_step)
    sup_d2 = 0.0
    for j in range(t.d):
        e = np.zeros(t.d)
        e[j] = fd_step
        gp = t.dphi_inv_at_y(y_in + e)
        gm = t.dphi_inv_at_y(y_in - e)
        sup_d2 = max(sup_d2, float(np.max(np.abs((gp - gm) / (2 * fd_step)))))

    accepted = (min_det > 0.0) and (lower_bound >= 1.0 - t.c_lambda - slack)
    return DiffeoReport(sup_dphi, min_det, lower_bound, sup_dphi_inv, sup_d2,
                        round_trip, t.c_lambda, grid.shape[0], accepted)


def verify_ellipticity(t: ZvonkinTransform, grid_y: np.ndarray | None = None) -> EllipticityReport:
    """Eigenvalue sandwich of B = st st^T over a grid in the image box."""
    if grid_y is None:
        if t.d == 1:
            grid_y = np.linspace(t.image_lo[0], t.image_hi[0], 1000)[:, None]
        else:
            ax = [np.linspace(t.image_lo[j], t.image_hi[j], 32) for j in range(t.d)]
            m = np.meshgrid(*ax, indexing="ij")
            grid_y = np.stack([mm.ravel() for mm in m], axis=-1)
    grid_y = np.asarray(grid_y, dtype=float)
    st = t.sigmatilde(grid_y)
    B = np.einsum("nik,njk->nij", st, st)
    asym = np.max(np.abs(B - np.swapaxes(B, 1, 2)))
    if asym > 1e-8 * max(1.0, float(np.max(np.abs(B)))):
        raise NumericalError("asymmetric diffusion matrix B: internal inconsistency")
    ev = np.linalg.eigvalsh(B)
    return EllipticityReport(float(ev[:, 0].min()), float(ev[:, -1].max()), grid_y.shape[0])
