"""Brownian increments on a uniform grid with reproducible per-path seeding.

Every path's generator is keyed by (master seed, path index) through a
SeedSequence spawn key, so an ensemble is bitwise identical however it is
chunked or ordered, and any single path can be regenerated in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

__all__ = ["BrownianGrid", "brownian_grid", "ensemble_increments", "coarsen_increments"]


def _path_rng(seed: int, path_index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(path_index),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class BrownianGrid:
    """Increments dB_i = B_{t_{i+1}} - B_{t_i} of one k-dimensional path."""

    n_steps: int
    dt: float
    k: int
    seed: int
    path_index: int
    increments: np.ndarray  # (n_steps, k)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)


def brownian_grid(n_steps: int, dt: float, k: int, seed: int, path_index: int = 0) -> BrownianGrid:
    if n_steps < 1 or k < 1:
        raise ConfigError("n_steps and k must be >= 1")
    if not (dt > 0):
        raise ConfigError("dt must be positive")
    rng = _path_rng(seed, path_index)
    inc = rng.normal(0.0, np.sqrt(dt), size=(n_steps, k))
    return BrownianGrid(n_steps, dt, k, seed, path_index, inc)


def ensemble_increments(n_paths: int, n_steps: int, dt: float, k: int, seed: int,
                        first_path: int = 0) -> np.ndarray:
    """Increments for paths [first_path, first_path + n_paths), shape (n, steps, k).

    Row i is bitwise equal to brownian_grid(..., path_index=first_path+i).
    """
    out = np.empty((n_paths, n_steps, k))
    sqdt = np.sqrt(dt)
    for i in range(n_paths):
        rng = _path_rng(seed, first_path + i)
        out[i] = rng.normal(0.0, sqdt, size=(n_steps, k))
    return out


def coarsen_increments(fine: np.ndarray, factor: int) -> np.ndarray:
    """Aggregate increments by summing groups of `factor` consecutive steps.

    Produces the same underlying Brownian path on a coarser grid, which is
    the right comparison for step-size refinement studies.
    """
    if fine.shape[-2] % factor != 0:
        raise ConfigError("step count not divisible by coarsening factor")
    shape = fine.shape[:-2] + (fine.shape[-2] // factor, factor, fine.shape[-1])
    return fine.reshape(shape).sum(axis=-2)
