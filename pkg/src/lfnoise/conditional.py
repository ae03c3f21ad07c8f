"""Posterior mean of X given X + Y and the quantities built from it.

For laws ``f`` (of X) and ``g`` (of Y) on a common step, the posterior mean
``lam(s) = E[X | X + Y = s]`` lives on the grid of ``f * g``.  The objective
``phi(g) = sum_s lam(s)**2 (f*g)(s)`` is the second moment of the posterior
mean, and ``D(y) = E[(X - lam(X + y))**2]`` is the penalty that appears in
the dual feasibility condition.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .distributions import GridPmf, moments, same_step

EXTENSIONS = ("clamp",)


@dataclass(frozen=True, eq=False)
class PosteriorMap:
    """``lam(s)`` on the convolution grid, totalized by the clamp policy.

    Zero-mass interior points carry the linear interpolation between the
    nearest mass points; points off either end take the nearest end value.
    """

    origin: float
    step: float
    values: np.ndarray
    mass_flags: np.ndarray
    extension: str = "clamp"

    def __post_init__(self) -> None:
        if self.extension not in EXTENSIONS:
            raise ValueError(f"unknown extension policy {self.extension!r}")
        if not self.mass_flags.any():
            raise ValueError("posterior map needs at least one mass point")

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.values.size)

    def index_of(self, s: np.ndarray | float) -> np.ndarray:
        return np.rint((np.asarray(s, dtype=float) - self.origin) / self.step).astype(np.int64)

    def at_index(self, idx: np.ndarray) -> np.ndarray:
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    def __call__(self, s: np.ndarray | float) -> np.ndarray:
        return self.at_index(self.index_of(s))


class Objective(NamedTuple):
    phi: float
    var_posterior: float


def _check_steps(f: GridPmf, g: GridPmf) -> None:
    if not same_step(f.step, g.step):
        raise ValueError(f"step mismatch: {f.step!r} vs {g.step!r}")


def _numerators(f: GridPmf, g_weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mass = np.convolve(f.weights, g_weights)
    first = np.convolve(f.weights * f.points, g_weights)
    return mass, first


def posterior_mean(f: GridPmf, g: GridPmf) -> PosteriorMap:
    _check_steps(f, g)
    mass, first = _numerators(f, g.weights)
    flags = mass > 0
    values = np.zeros_like(mass)
    values[flags] = first[flags] / mass[flags]
    idx = np.flatnonzero(flags)
    if idx.size < flags.size:
        values = np.interp(np.arange(mass.size), idx, values[idx])
    values.setflags(write=False)
    flags.setflags(write=False)
    return PosteriorMap(f.origin + g.origin, f.step, values, flags)


def phi_from_weights(f: GridPmf, g_weights: np.ndarray) -> float:
    """``sum_s N(s)**2 / M(s)`` for raw (possibly padded) noise weights."""
    mass, first = _numerators(f, g_weights)
    flags = mass > 0
    return math.fsum(first[flags] ** 2 / mass[flags])


def objective_phi(f: GridPmf, g: GridPmf) -> Objective:
    """Second moment and variance of ``E[X | X + Y]``."""
    _check_steps(f, g)
    mass, first = _numerators(f, g.weights)
    flags = mass > 0
    phi = math.fsum(first[flags] ** 2 / mass[flags])
    # sum_s lam(s) M(s) = E X exactly; take it from f to avoid extra rounding
    m = moments(f).mean
    var_post = phi - m * m
    return Objective(phi, var_post)


def prediction_error(f: GridPmf, g: GridPmf) -> float:
    """``var X - var E[X | X + Y]``, clipped into ``[0, var X]``."""
    var_x = moments(f).variance
    err = var_x - objective_phi(f, g).var_posterior
    return min(max(err, 0.0), var_x)


def weighted_square_sum(w: np.ndarray, resid: np.ndarray) -> np.ndarray:
    """``sum_i w[i] * resid[i]**2`` per column, adding rows one at a time.

    The fixed row order makes each column's bits independent of how many
    columns are processed together.
    """
    acc = np.zeros(resid.shape[1])
    for wi, ri in zip(w, resid):
        acc += wi * (ri * ri)
    return acc


def map_blocks(fn, n: int, threads: int = 1, chunk: int = 64) -> np.ndarray:
    """``concatenate(fn(i, j))`` over column blocks ``[i, j)`` of ``range(n)``."""
    if threads <= 1 or n <= chunk:
        return fn(0, n)
    bounds = [(i, min(i + chunk, n)) for i in range(0, n, chunk)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda b: fn(*b), bounds))
    return np.concatenate(parts)


def dual_penalty(
    f: GridPmf,
    lam: PosteriorMap,
    y: np.ndarray | float,
    threads: int = 1,
    chunk: int = 64,
) -> np.ndarray:
    """``D(y) = sum_x f(x) (x - lam(x + y))**2`` at every requested noise point."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    x, w = f.points, f.weights

    def block(i: int, j: int) -> np.ndarray:
        resid = x[:, None] - lam(x[:, None] + y[None, i:j])
        return weighted_square_sum(w, resid)

    return map_blocks(block, y.size, threads, chunk)


def envelope_gradient(
    f: GridPmf, g: GridPmf, y_grid: np.ndarray, threads: int = 1
) -> np.ndarray:
    """Linearization ``sigma**2 - D(y)`` of ``phi`` at ``g`` with ``lam`` held fixed.

    Because ``phi(g') >= sum_y g'(y) (sigma**2 - D(y))`` for every ``g'`` and
    equality holds at ``g``, this is a valid linear minorant of ``phi`` and
    Frank-Wolfe gaps computed from it are true suboptimality bounds.
    """
    lam = posterior_mean(f, g)
    second = moments(f).second_moment
    return second - dual_penalty(f, lam, y_grid, threads=threads)
