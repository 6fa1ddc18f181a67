"""Problem statement and standing-assumption audits.

An SDE problem is dX_t = b(X_t) dt + sigma(X_t) dB_t on R^d with a
k-dimensional driving Brownian motion.  The drift b is allowed to be merely
theta-Holder continuous with linear growth, sigma must be three times
differentiable with bounded derivatives, and a = sigma sigma^T must be
invertible with a uniformly bounded inverse.  This module holds the problem
container plus numerical audits of those three conditions on a sample grid:
none of them can be proven by sampling, but a failed audit is a hard
counterexample and is reported as such.

Point convention: every field evaluator is vectorized and maps an (n, d)
array of points to (n, d) for drifts, (n, d, k) for diffusions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError

__all__ = [
    "VectorField",
    "FunctionalG",
    "SdeProblem",
    "HolderReport",
    "AssumptionReport",
    "default_grid",
    "estimate_holder_seminorm",
    "check_assumptions",
]


@dataclass(frozen=True)
class VectorField:
    """A total, vectorized coefficient field on R^d.

    `fn` maps an (n, dim_in) array to (n, *out_shape); it must be defined for
    every finite input (escape handling elsewhere relies on that).
    """

    dim_in: int
    out_shape: tuple[int, ...]
    fn: Callable[[np.ndarray], np.ndarray]
    label: str = "field"

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.dim_in:
            raise ConfigError(
                f"{self.label}: expected points of shape (n, {self.dim_in}), got {x.shape}"
            )
        out = np.asarray(self.fn(x), dtype=float)
        want = (x.shape[0],) + self.out_shape
        if out.shape != want:
            raise ConfigError(f"{self.label}: evaluator returned {out.shape}, expected {want}")
        return out


@dataclass(frozen=True)
class FunctionalG:
    """Scalar observable G(t, x) of the state, with its x-derivative.

    `lower_bound_claimed` is the constant C in the claim |d_x G| >= C used by
    the density lower-bound route; it is audited, never trusted.
    """

    fn: Callable[[float, np.ndarray], np.ndarray]       # (t, (n,)) -> (n,)
    dx: Callable[[float, np.ndarray], np.ndarray]       # (t, (n,)) -> (n,)
    lower_bound_claimed: float
    label: str = "G"

    def check_lower_bound(self, t: float, xs: np.ndarray) -> None:
        vals = np.abs(self.dx(t, np.asarray(xs, dtype=float)))
        bad = vals < self.lower_bound_claimed
        if np.any(bad):
            i = int(np.argmax(bad))
            raise ConfigError(
                f"{self.label}: |d_x G| = {vals[i]:.3e} < claimed bound "
                f"{self.lower_bound_claimed} at x = {np.asarray(xs)[i]!r}"
            )


@dataclass(frozen=True)
class SdeProblem:
    """dX = b(X) dt + sigma(X) dB, X_0 = x0, on [0, horizon]."""

    d: int
    k: int
    drift: VectorField
    diffusion: VectorField
    x0: np.ndarray
    horizon: float
    theta: float = 0.5
    label: str = "problem"

    def __post_init__(self):
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        if self.d < 1 or self.k < 1:
            raise ConfigError("d and k must be >= 1")
        if self.x0.shape != (self.d,):
            raise ConfigError(f"x0 must have shape ({self.d},), got {self.x0.shape}")
        if not (self.horizon > 0):
            raise ConfigError("horizon must be positive")
        if not (0 < self.theta <= 1):
            raise ConfigError("theta must lie in (0, 1]")
        if self.drift.dim_in != self.d or self.drift.out_shape != (self.d,):
            raise ConfigError("drift shape mismatch with problem dimensions")
        if self.diffusion.dim_in != self.d or self.diffusion.out_shape != (self.d, self.k):
            raise ConfigError("diffusion shape mismatch with problem dimensions")

    def a(self, x: np.ndarray) -> np.ndarray:
        """Diffusion matrix a(x) = sigma(x) sigma(x)^T, shape (n, d, d)."""
        s = self.diffusion(x)
        return np.einsum("nik,njk->nij", s, s)


@dataclass(frozen=True)
class HolderReport:
    seminorm: float          # sup |f(x)-f(y)| / |x-y|^theta over pairs with |x-y| <= 1
    weighted_sup: float      # sup |f(x)| / (1 + |x|)
    theta: float
    pair_count: int
    sample_grid: str


@dataclass(frozen=True)
class AssumptionReport:
    holder: HolderReport
    sigma_derivative_sups: tuple[float, float, float]   # orders 1..3, axis-aligned probes
    inv_a_sup: float         # sup of Hilbert-Schmidt norm of a(x)^{-1}
    passes: dict = field(default_factory=dict)
    offending_point: np.ndarray | None = None


def default_grid(d: int, radius: float = 10.0, spacing: float | None = None) -> np.ndarray:
    """Uniform audit grid on [-radius, radius]^d, shape (n, d).

    Spacing defaults to 0.01 in one dimension and 0.05 in two; higher d gets
    a coarse 0.25 lattice to keep the point count bounded.
    """
    if spacing is None:
        spacing = {1: 0.01, 2: 0.05}.get(d, 0.25)
    axis = np.arange(-radius, radius + spacing / 2, spacing)
    if d == 1:
        return axis[:, None]
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def estimate_holder_seminorm(
    f: Callable[[np.ndarray], np.ndarray] | VectorField,
    theta: float,
    grid: np.ndarray,
) -> HolderReport:
    """Lower-bound estimate of the theta-Holder seminorm of f on a point set.

    Only pairs with 0 < |x - y| <= 1 enter the seminorm (the norm on the drift
    class localizes the increment part); the linear-growth part is measured as
    sup |f(x)| / (1 + |x|).  The estimate is monotone under grid refinement.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise ConfigError("grid must have shape (n, d)")
    n = grid.shape[0]
    if n < 2:
        raise ConfigError("degenerate grid: need at least two points")
    vals = f(grid)
    vals2 = vals.reshape(n, -1)

    seminorm = 0.0
    pair_count = 0
    # chunk the pair matrix to bound memory at ~n * chunk
    chunk = max(1, int(2e7) // max(n, 1))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        dx = grid[start:stop, None, :] - grid[None, :, :]
        dist = np.sqrt(np.sum(dx * dx, axis=-1))
        admissible = (dist > 0) & (dist <= 1.0)
        if not np.any(admissible):
            continue
        dfv = vals2[start:stop, None, :] - vals2[None, :, :]
        dfn = np.sqrt(np.sum(dfv * dfv, axis=-1))
        ratio = np.where(admissible, dfn / np.where(admissible, dist, 1.0) ** theta, 0.0)
        seminorm = max(seminorm, float(ratio.max()))
        pair_count += int(admissible.sum()) // 1
    if pair_count == 0:
        raise ConfigError("degenerate grid: no point pairs with |x - y| <= 1")

    vnorm = np.sqrt(np.sum(vals2 * vals2, axis=-1))
    xnorm = np.sqrt(np.sum(grid * grid, axis=-1))
    weighted_sup = float(np.max(vnorm / (1.0 + xnorm)))

    lo, hi = grid.min(axis=0), grid.max(axis=0)
    desc = f"{n} points in [{lo.min():g}, {hi.max():g}]^{grid.shape[1]}"
    return HolderReport(seminorm, weighted_sup, theta, pair_count // 2, desc)


def _axis_derivative_sups(field: VectorField, grid: np.ndarray, h: float):
    """Axis-aligned centered-difference sups of |D^m field| for m = 1, 2, 3."""
    sups = [0.0, 0.0, 0.0]
    for j in range(field.dim_in):
        e = np.zeros(grid.shape[1])
        e[j] = 1.0
        fm2 = field(grid - 2 * h * e)
        fm1 = field(grid - h * e)
        f0 = field(grid)
        fp1 = field(grid + h * e)
        fp2 = field(grid + 2 * h * e)
        d1 = (fp1 - fm1) / (2 * h)
        d2 = (fp1 - 2 * f0 + fm1) / h**2
        d3 = (fp2 - 2 * fp1 + 2 * fm1 - fm2) / (2 * h**3)
        for m, dm in enumerate((d1, d2, d3)):
            sups[m] = max(sups[m], float(np.max(np.abs(dm))))
    return tuple(sups)


def check_assumptions(
    problem: SdeProblem,
    grid: np.ndarray | None = None,
    fd_step: float = 1e-4,
    singular_tol: float = 1e-12,
) -> AssumptionReport:
    """Audit the three standing conditions on a sample grid.

    Passing is necessary, not sufficient; a singular diffusion matrix at any
    grid point fails the bounded-inverse condition with the point reported.
    """
    if grid is None:
        grid = default_grid(problem.d)
    grid = np.asarray(grid, dtype=float)
    if fd_step <= 0:
        raise ConfigError("fd_step must be positive")

    holder = estimate_holder_seminorm(problem.drift, problem.theta, grid)
    dsups = _axis_derivative_sups(problem.diffusion, grid, fd_step)

    a = problem.a(grid)
    dets = np.linalg.det(a)
    scale = np.maximum(1.0, np.abs(a).reshape(a.shape[0], -1).max(axis=1) ** problem.d)
    singular = np.abs(dets) < singular_tol * scale
    offending = None
    if np.any(singular):
        offending = grid[int(np.argmax(singular))].copy()
        inv_a_sup = float("inf")
    else:
        inv_a = np.linalg.inv(a)
        inv_a_sup = float(np.max(np.sqrt(np.sum(inv_a * inv_a, axis=(1, 2)))))

    passes = {
        "holder_drift": bool(np.isfinite(holder.seminorm) and np.isfinite(holder.weighted_sup)),
        "diffusion_c3": bool(all(np.isfinite(s) for s in dsups)),
        "inverse_diffusion_bounded": bool(offending is None and np.isfinite(inv_a_sup)),
    }
    return AssumptionReport(holder, dsups, inv_a_sup, passes, offending)
