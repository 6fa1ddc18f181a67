"""Path simulation for the original/transformed pair, plus the stochastic
flow machinery built on top of it.

The transformed state Y is the one actually stepped; the preimage X = the
inverse image of Y rides along via warm-started Newton so that coefficient
evaluations (which live on the x-grid) never pay a cold inversion.  Paths
that leave the validated boxes are frozen at their last good state and
flagged, never extrapolated.

Flow quantities are scalar-state only (d = k = 1): the first-variation
process of Y has the closed form

    JY_t = exp( int Dst dB + int (Dbt - Dst^2 / 2) ds )

with left-endpoint (Ito) sums, and the Malliavin derivative follows as
D_r Y_t = JY_t JY_r^{-1} st(Y_r) for r <= t.  Pulling back through the
inverse map gives D_r X_t, and squared-norm accumulators reduce the
nondegeneracy certificate to one streaming pass per ensemble.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .model import FunctionalG, SdeProblem, VectorField
from .transform import ZvonkinTransform
from .wiener import BrownianGrid, ensemble_increments

__all__ = [
    "PathEnsemble",
    "TransformPath",
    "FdCheck",
    "NondegeneracyReport",
    "euler_maruyama",
    "transform_path",
    "simulate_equivalent_pair",
    "jacobian_closed_form",
    "jacobian_variational",
    "malliavin_derivative_y",
    "malliavin_derivative_x",
    "dG_derivative",
    "malliavin_fd_check",
    "nondegeneracy_ensemble",
    "brownian_terminal_functional",
    "transform_terminal_functional",
]

# Paths per chunk. Bounds peak memory: increments alone are
# chunk * n_steps * k floats, so 5000 paths at 10^4 steps is ~400 MB/8 = 50 per
# array; keep a couple of those in flight at most.
_CHUNK = 5_000


def _steps_for(horizon: float, dt: float, n_steps: int | None) -> tuple[int, float]:
    if n_steps is None:
        n_steps = int(round(horizon / dt))
    if n_steps < 1:
        raise ConfigError(f"horizon {horizon} shorter than one step at dt={dt}")
    return n_steps, horizon / n_steps


def _in_box(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return np.all((x >= lo) & (x <= hi), axis=-1)


def euler_maruyama(drift: VectorField, diffusion: VectorField, x0,
                   bg: BrownianGrid) -> np.ndarray:
    """Single-path Euler scheme for dX = drift dt + diffusion dB.

    Works for any state dimension; returns the path on the grid of `bg`,
    shape (n_steps + 1, d).
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float))[None, :]
    path = np.empty((bg.n_steps + 1, x.shape[1]))
    path[0] = x[0]
    for i in range(bg.n_steps):
        s = diffusion(x)
        x = x + drift(x) * bg.dt + np.einsum("njk,k->nj", s, bg.increments[i])
        path[i + 1] = x[0]
    return path


@dataclass(frozen=True)
class TransformPath:
    """One path of the transformed dynamics with its running preimage."""

    bg: BrownianGrid
    y: np.ndarray       # (n_steps + 1, d)
    x_hat: np.ndarray   # (n_steps + 1, d), x_hat = phi^{-1}(y) on the grid

    @property
    def times(self) -> np.ndarray:
        return self.bg.times


def transform_path(problem: SdeProblem, transform: ZvonkinTransform,
                   bg: BrownianGrid) -> TransformPath:
    """Simulate one path of dY = bt(Y) dt + st(Y) dB from Y_0 = phi(x0).

    Raises NumericalError if the path leaves the certified image box; the
    single-path flow routines assume fully in-domain trajectories.
    """
    d = problem.d
    lo, hi = _flow_image_box(transform)
    y = transform.phi(problem.x0[None, :])
    xh = problem.x0[None, :].copy()
    ys = np.empty((bg.n_steps + 1, d))
    xs = np.empty((bg.n_steps + 1, d))
    ys[0], xs[0] = y[0], xh[0]
    for i in range(bg.n_steps):
        bt = transform.btilde(None, x_hat=xh)
        st = transform.sigmatilde(None, x_hat=xh)
        y = y + bt * bg.dt + np.einsum("njk,k->nj", st, bg.increments[i])
        if not _in_box(y, lo, hi)[0]:
            raise NumericalError(
                f"path escaped the certified image box at step {i + 1} "
                f"(y = {y[0]!r}); enlarge the resolvent radius or shorten the horizon"
            )
        xh = transform.inverse(y, x0=xh)
        ys[i + 1], xs[i + 1] = y[0], xh[0]
    return TransformPath(bg=bg, y=ys, x_hat=xs)


def _flow_image_box(transform: ZvonkinTransform) -> tuple[np.ndarray, np.ndarray]:
    # 2h margin keeps y +- h (coefficient derivatives) strictly inside the
    # certified image box.
    m = 2.0 * transform.h
    return transform.image_lo + m, transform.image_hi - m


@dataclass(frozen=True)
class PathEnsemble:
    """Terminal states of the coupled direct/transformed simulations.

    Both routes consume identical Brownian increments path by path, so the
    two X_T columns estimate the same random variable: `x_direct` from the
    raw Euler scheme on the original coefficients, `x_from_y` from the
    transformed scheme pulled back through the inverse map.  `y_from_x`
    pushes the direct samples forward for comparisons in y-space.  Escaped
    paths hold their last in-domain state and are excluded via `escaped`.
    """

    n_paths: int
    n_steps: int
    dt: float
    seed: int
    x_direct: np.ndarray    # (n, d)
    y: np.ndarray           # (n, d)
    x_from_y: np.ndarray    # (n, d)
    y_from_x: np.ndarray    # (n, d)
    escaped: np.ndarray     # (n,) bool
    x_paths: np.ndarray | None = None   # (n, n_steps + 1, d) when stored
    y_paths: np.ndarray | None = None

    @property
    def n_escaped(self) -> int:
        return int(self.escaped.sum())

    def kept(self, arr: np.ndarray) -> np.ndarray:
        return arr[~self.escaped]


def simulate_equivalent_pair(problem: SdeProblem, transform: ZvonkinTransform,
                             n_paths: int, dt: float, seed: int,
                             n_steps: int | None = None,
                             store_paths: bool = False,
                             max_escape_frac: float = 1e-3,
                             chunk_size: int = _CHUNK) -> PathEnsemble:
    """Run the direct and transformed Euler schemes on shared increments."""
    n_steps, dt = _steps_for(problem.horizon, dt, n_steps)
    d, k = problem.d, problem.k
    if store_paths and n_paths * (n_steps + 1) > 20_000_000:
        raise ConfigError("path storage too large; lower n_paths or n_steps")
    v_lo, v_hi = transform.valid_lo, transform.valid_hi
    i_lo, i_hi = _flow_image_box(transform)
    if not _in_box(problem.x0[None, :], v_lo, v_hi)[0]:
        raise ConfigError(f"x0 = {problem.x0!r} outside the validated box")

    x_direct = np.empty((n_paths, d))
    y_term = np.empty((n_paths, d))
    x_from_y = np.empty((n_paths, d))
    escaped = np.zeros(n_paths, dtype=bool)
    x_paths = np.empty((n_paths, n_steps + 1, d)) if store_paths else None
    y_paths = np.empty((n_paths, n_steps + 1, d)) if store_paths else None

    y0 = transform.phi(problem.x0[None, :])[0]
    for start in range(0, n_paths, chunk_size):
        m = min(chunk_size, n_paths - start)
        dW = ensemble_increments(m, n_steps, dt, k, seed, first_path=start)
        X = np.tile(problem.x0, (m, 1))
        Y = np.tile(y0, (m, 1))
        Xh = np.tile(problem.x0, (m, 1))
        if store_paths:
            x_paths[start:start + m, 0] = X
            y_paths[start:start + m, 0] = Y
        act = np.arange(m)
        for i in range(n_steps):
            dB = dW[act, i]
            xa, ya, xha = X[act], Y[act], Xh[act]
            xa = xa + problem.drift(xa) * dt \
                + np.einsum("njk,nk->nj", problem.diffusion(xa), dB)
            bt = transform.btilde(None, x_hat=xha)
            st = transform.sigmatilde(None, x_hat=xha)
            ya = ya + bt * dt + np.einsum("njk,nk->nj", st, dB)
            ok = _in_box(xa, v_lo, v_hi) & _in_box(ya, i_lo, i_hi)
            stay = act[ok]
            X[stay], Y[stay] = xa[ok], ya[ok]
            Xh[stay] = transform.inverse(ya[ok], x0=xha[ok])
            escaped[start + act[~ok]] = True
            act = stay
            if store_paths:
                # frozen rows simply repeat their last state
                x_paths[start:start + m, i + 1] = X
                y_paths[start:start + m, i + 1] = Y
            if act.size == 0:
                break
        x_direct[start:start + m] = X
        y_term[start:start + m] = Y
        x_from_y[start:start + m] = Xh

    frac = escaped.mean()
    if frac > max_escape_frac:
        raise NumericalError(
            f"{escaped.sum()} of {n_paths} paths ({frac:.2%}) escaped the "
            f"validated boxes; enlarge the resolvent radius"
        )
    y_from_x = np.empty_like(x_direct)
    keep = ~escaped
    y_from_x[keep] = transform.phi(x_direct[keep])
    y_from_x[escaped] = np.nan
    return PathEnsemble(n_paths=n_paths, n_steps=n_steps, dt=dt, seed=seed,
                        x_direct=x_direct, y=y_term, x_from_y=x_from_y,
                        y_from_x=y_from_x, escaped=escaped,
                        x_paths=x_paths, y_paths=y_paths)


def _require_scalar(problem_or_transform) -> None:
    if getattr(problem_or_transform, "d") != 1 or getattr(problem_or_transform, "k") != 1:
        raise ConfigError("flow derivatives are implemented for d = k = 1 only")


def jacobian_closed_form(transform: ZvonkinTransform,
                         tp: TransformPath) -> tuple[np.ndarray, np.ndarray]:
    """First variation of Y along one path via the stochastic exponential.

    Returns (JY, JY_inv) on the grid, both shape (n_steps + 1,).  Left
    endpoints throughout, matching the Euler scheme that produced the path.
    """
    _require_scalar(transform)
    y_left = tp.y[:-1]
    dbt, dst = transform.coefficient_derivs(y_left, x_warm=tp.x_hat[:-1])
    dbt, dst = dbt[:, 0, 0], dst[:, 0, 0, 0]
    dB = tp.bg.increments[:, 0]
    expo = np.concatenate(
        ([0.0], np.cumsum(dst * dB + (dbt - 0.5 * dst ** 2) * tp.bg.dt)))
    return np.exp(expo), np.exp(-expo)


def jacobian_variational(transform: ZvonkinTransform,
                         tp: TransformPath) -> np.ndarray:
    """First variation by Euler on the linearized equation itself.

    Independent route from `jacobian_closed_form`; the two must agree up to
    O(dt) and their gap is a discretization diagnostic.
    """
    _require_scalar(transform)
    y_left = tp.y[:-1]
    dbt, dst = transform.coefficient_derivs(y_left, x_warm=tp.x_hat[:-1])
    dbt, dst = dbt[:, 0, 0], dst[:, 0, 0, 0]
    dB = tp.bg.increments[:, 0]
    factors = 1.0 + dbt * tp.bg.dt + dst * dB
    return np.concatenate(([1.0], np.cumprod(factors)))


def malliavin_derivative_y(transform: ZvonkinTransform, tp: TransformPath,
                           jy: np.ndarray, jy_inv: np.ndarray) -> np.ndarray:
    """D_r Y_t on the grid as a lower-triangular (t, r) matrix.

    Row t, column r holds JY_t JY_r^{-1} st(Y_r) for r <= t, zero above the
    diagonal (the derivative is adapted).
    """
    _require_scalar(transform)
    st = transform.sigmatilde(None, x_hat=tp.x_hat)[:, 0, 0]
    grid = jy[:, None] * (jy_inv * st)[None, :]
    return np.tril(grid)


def malliavin_derivative_x(transform: ZvonkinTransform, tp: TransformPath,
                           dy_grid: np.ndarray) -> np.ndarray:
    """Pull D_r Y_t back to D_r X_t through the inverse map's derivative."""
    _require_scalar(transform)
    dpi = transform.dphi_inv_at_y(None, x_hat=tp.x_hat)[:, 0, 0]
    return dpi[:, None] * dy_grid


def dG_derivative(G: FunctionalG, transform: ZvonkinTransform,
                  tp: TransformPath, dx_grid: np.ndarray,
                  t_index: int = -1) -> tuple[np.ndarray, float]:
    """Chain rule row D_r G(t, X_t) and its squared Cameron-Martin norm.

    Audits the claimed lower bound on |d_x G| over the states this path
    visited before trusting the functional.
    """
    _require_scalar(transform)
    t_index = range(len(tp.y))[t_index]
    t = tp.times[t_index]
    xs = tp.x_hat[:t_index + 1, 0]
    G.check_lower_bound(t, xs)
    row = G.dx(t, tp.x_hat[t_index, 0:1])[0] * dx_grid[t_index]
    norm_sq = float(np.trapezoid(row[:t_index + 1] ** 2, dx=tp.bg.dt))
    return row, norm_sq


@dataclass(frozen=True)
class FdCheck:
    """Malliavin row vs a finite-difference Cameron-Martin shift."""

    r1: float
    r2: float
    eps: float
    integral: float        # int_{r1}^{r2} D_r X_T dr from the Malliavin row
    fd_value: float        # (X_T(omega + eps h) - X_T(omega)) / eps
    rel_gap: float
    discriminating: bool   # False when the integral is too small to test


def malliavin_fd_check(problem: SdeProblem, transform: ZvonkinTransform,
                       bg: BrownianGrid, r1: float, r2: float,
                       eps: float = 1e-4) -> FdCheck:
    """Compare the Malliavin row against an actual directional derivative.

    Shifts the driving increments by eps on [r1, r2] (snapped to the grid),
    resimulates, and differences the terminal X.  A tiny integral cannot
    discriminate; the check reports that rather than a fake pass.
    """
    _require_scalar(problem)
    i1 = int(round(r1 / bg.dt))
    i2 = int(round(r2 / bg.dt))
    if not 0 <= i1 < i2 <= bg.n_steps:
        raise ConfigError(f"window [{r1}, {r2}] does not fit the time grid")
    base = transform_path(problem, transform, bg)
    jy, jy_inv = jacobian_closed_form(transform, base)
    dy = malliavin_derivative_y(transform, base, jy, jy_inv)
    dx = malliavin_derivative_x(transform, base, dy)
    row = dx[-1]
    integral = float(np.trapezoid(row[i1:i2 + 1], dx=bg.dt))

    shift = np.zeros((bg.n_steps, bg.k))
    shift[i1:i2, 0] = eps * bg.dt
    bumped = BrownianGrid(n_steps=bg.n_steps, dt=bg.dt, k=bg.k, seed=bg.seed,
                          path_index=bg.path_index,
                          increments=bg.increments + shift)
    pert = transform_path(problem, transform, bumped)
    fd = float((pert.x_hat[-1, 0] - base.x_hat[-1, 0]) / eps)
    discriminating = abs(integral) > 1e-10
    rel = abs(fd - integral) / max(abs(integral), 1e-10)
    return FdCheck(r1=i1 * bg.dt, r2=i2 * bg.dt, eps=eps, integral=integral,
                   fd_value=fd, rel_gap=rel, discriminating=discriminating)


@dataclass(frozen=True)
class NondegeneracyReport:
    """Ensemble certificate: squared Cameron-Martin norms of D X_T (and of
    D G(T, X_T) when a functional is supplied), path by path."""

    n_paths: int
    n_steps: int
    dt: float
    seed: int
    threshold: float
    norms_x: np.ndarray            # (n,), NaN on escaped paths
    norms_g: np.ndarray | None
    escaped: np.ndarray

    @property
    def n_escaped(self) -> int:
        return int(self.escaped.sum())

    @property
    def min_norm_x(self) -> float:
        return float(np.nanmin(self.norms_x))

    @property
    def n_degenerate(self) -> int:
        norms = self.norms_g if self.norms_g is not None else self.norms_x
        return int(np.sum(norms[~self.escaped] <= self.threshold))


def nondegeneracy_ensemble(problem: SdeProblem, transform: ZvonkinTransform,
                           n_paths: int, dt: float, seed: int,
                           G: FunctionalG | None = None,
                           n_steps: int | None = None,
                           threshold: float = 1e-12,
                           chunk_size: int = _CHUNK) -> NondegeneracyReport:
    """Streaming pass over an ensemble computing ||D X_T||^2 per path.

    Uses the closed-form Jacobian and the identity

        ||D X_T||^2 = (Dphi^{-1}(Y_T) JY_T)^2 int_0^T (st(Y_r) / JY_r)^2 dr

    so only scalar accumulators are kept per path, never the (t, r) grid.
    """
    _require_scalar(problem)
    n_steps, dt = _steps_for(problem.horizon, dt, n_steps)
    norms_x = np.full(n_paths, np.nan)
    norms_g = np.full(n_paths, np.nan) if G is not None else None
    escaped = np.zeros(n_paths, dtype=bool)
    for start in range(0, n_paths, chunk_size):
        m = min(chunk_size, n_paths - start)
        dW = ensemble_increments(m, n_steps, dt, 1, seed, first_path=start)
        out = _flow_sweep(problem, transform, dW, dt, G=G)
        escaped[start + np.flatnonzero(out["escaped"])] = True
        keep = ~out["escaped"]
        norms_x[start + np.flatnonzero(keep)] = out["norm_x"][keep]
        if G is not None:
            norms_g[start + np.flatnonzero(keep)] = out["norm_g"][keep]
    return NondegeneracyReport(n_paths=n_paths, n_steps=n_steps, dt=dt,
                               seed=seed, threshold=threshold,
                               norms_x=norms_x, norms_g=norms_g,
                               escaped=escaped)


def _flow_sweep(problem: SdeProblem, transform: ZvonkinTransform,
                dW: np.ndarray, dt: float, G: FunctionalG | None = None,
                store_q: bool = False, on_escape: str = "freeze") -> dict:
    """Vectorized transformed sweep carrying the flow accumulators.

    Steps Y (with its preimage), the log-Jacobian, and the left Riemann sum
    of (st / JY)^2; a trapezoid correction lands at the end.  `store_q`
    additionally records st(Y_r) / JY_r on the whole grid, which the
    Nourdin-Viens resimulator needs for derivative rows.
    """
    m, n_steps, _ = dW.shape
    lo, hi = _flow_image_box(transform)
    y0 = transform.phi(problem.x0[None, :])[0]
    if not (lo[0] <= y0[0] <= hi[0]):
        raise ConfigError(f"phi(x0) = {y0!r} outside the certified image box")
    Y = np.tile(y0, (m, 1))
    Xh = np.tile(problem.x0, (m, 1))
    expo = np.zeros(m)            # log JY
    ssum = np.zeros(m)            # left sum of q^2 dt, q = st / JY
    q0_sq = np.zeros(m)
    q_grid = np.empty((m, n_steps + 1)) if store_q else None
    escaped = np.zeros(m, dtype=bool)
    act = np.arange(m)
    for i in range(n_steps):
        ya, xha = Y[act], Xh[act]
        bt = transform.btilde(None, x_hat=xha)
        st = transform.sigmatilde(None, x_hat=xha)[:, 0, 0]
        dbt, dst = transform.coefficient_derivs(ya, x_warm=xha)
        dbt, dst = dbt[:, 0, 0], dst[:, 0, 0, 0]
        if G is not None:
            G.check_lower_bound(i * dt, xha[:, 0])
        q = st / np.exp(expo[act])
        qsq = q * q
        ssum[act] += qsq * dt
        if i == 0:
            q0_sq[act] = qsq
        if store_q:
            q_grid[act, i] = q
        dB = dW[act, i, 0]
        expo[act] += dst * dB + (dbt - 0.5 * dst ** 2) * dt
        ya = ya + bt[:, [0]] * dt + st[:, None] * dB[:, None]
        ok = _in_box(ya, lo, hi)
        if not np.all(ok):
            if on_escape == "raise":
                raise NumericalError(
                    f"{np.sum(~ok)} path(s) escaped the certified image box "
                    f"at step {i + 1}"
                )
            escaped[act[~ok]] = True
        stay = act[ok]
        Y[stay] = ya[ok]
        Xh[stay] = transform.inverse(ya[ok], x0=Xh[stay])
        act = stay
        if act.size == 0:
            break

    st_T = transform.sigmatilde(None, x_hat=Xh)[:, 0, 0]
    jy_T = np.exp(expo)
    q_T = st_T / jy_T
    if store_q:
        q_grid[:, n_steps] = q_T
    s_trap = ssum + 0.5 * (q_T ** 2 - q0_sq) * dt
    dpi_T = transform.dphi_inv_at_y(None, x_hat=Xh)[:, 0, 0]
    norm_x = (dpi_T * jy_T) ** 2 * s_trap
    out = {"Y": Y, "Xh": Xh, "jy": jy_T, "dpi": dpi_T, "s_trap": s_trap,
           "norm_x": norm_x, "escaped": escaped, "q_grid": q_grid}
    if G is not None:
        g_T = G.dx(n_steps * dt, Xh[:, 0])
        out["norm_g"] = g_T ** 2 * norm_x
        out["g_dx_T"] = g_T
    return out


def brownian_terminal_functional():
    """Resimulator for F = B_T: returns (F, DF) with DF constant one.

    The derivative DF is reported on the full time grid, one row per path,
    matching what the Nourdin-Viens estimator consumes.
    """
    def resim(dW: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m, n_steps, _ = dW.shape
        f = dW[:, :, 0].sum(axis=1)
        return f, np.ones((m, n_steps + 1))
    return resim


def transform_terminal_functional(problem: SdeProblem,
                                  transform: ZvonkinTransform, dt: float,
                                  G: FunctionalG | None = None):
    """Resimulator for F = X_T (or G(T, X_T)) through the transformed flow.

    Given increments it reruns the sweep and assembles the Malliavin rows
    D_r F = d_x G(T, X_T) Dphi^{-1}(Y_T) JY_T st(Y_r) / JY_r.  Escapes raise:
    the density estimator has no sensible value for a frozen path.
    """
    _require_scalar(problem)

    def resim(dW: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n_steps = dW.shape[1]
        if abs(n_steps * dt - problem.horizon) > 1e-9 * max(1.0, problem.horizon):
            raise ConfigError(
                f"{n_steps} steps at dt={dt} do not cover horizon {problem.horizon}")
        out = _flow_sweep(problem, transform, dW, dt, G=G, store_q=True,
                          on_escape="raise")
        rows = (out["dpi"] * out["jy"])[:, None] * out["q_grid"]
        x_T = out["Xh"][:, 0]
        if G is None:
            return x_T, rows
        t_T = n_steps * dt
        return G.fn(t_T, x_T), out["g_dx_T"][:, None] * rows
    return resim
