"""Finitely supported laws on a uniform grid.

A :class:`GridPmf` puts ``weights[i]`` on the point ``origin + i * step``.
Everything here is a pure function returning new, read-only values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

MASS_TOL = 1e-12
RENORMALIZE_TOL = 1e-6
STEP_RTOL = 1e-12


class Truncation(NamedTuple):
    """Window kept from an unbounded law and the mass thrown away."""

    lo: float
    hi: float
    omitted_mass: float


class Moments(NamedTuple):
    mean: float
    variance: float
    second_moment: float


@dataclass(frozen=True, eq=False)
class GridPmf:
    origin: float
    step: float
    weights: np.ndarray
    padded: bool = False
    truncation: Truncation | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        w = np.array(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("weights must be a nonempty 1-D sequence")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if not (self.step > 0 and math.isfinite(self.step)):
            raise ValueError("step must be positive")
        if abs(math.fsum(w) - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {math.fsum(w)!r}, not 1")
        if not self.padded and (w[0] == 0 or w[-1] == 0):
            raise ValueError("unpadded GridPmf must have nonzero end weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "origin", float(self.origin))
        object.__setattr__(self, "step", float(self.step))

    def __len__(self) -> int:
        return self.weights.size

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.step * np.arange(self.weights.size)

    @property
    def support(self) -> np.ndarray:
        return self.points[self.weights > 0]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridPmf):
            return NotImplemented
        return (
            self.origin == other.origin
            and self.step == other.step
            and np.array_equal(self.weights, other.weights)
        )

    def __hash__(self) -> int:
        return hash((self.origin, self.step, self.weights.tobytes()))

    def __repr__(self) -> str:
        return f"GridPmf(origin={self.origin!r}, step={self.step!r}, n={len(self)})"


@dataclass(frozen=True)
class MomentSpec:
    variance_bound: float
    mean_target: float = 0.0

    def __post_init__(self) -> None:
        if not (self.variance_bound > 0 and math.isfinite(self.variance_bound)):
            raise ValueError("variance_bound must be positive")


def make_grid_pmf(origin: float, step: float, weights: Sequence[float]) -> GridPmf:
    """Validate, normalize and trim raw weights into a :class:`GridPmf`.

    A total mass within 1e-12 of one is kept as given; within 1e-6 it is
    renormalized; anything further off is rejected as a construction bug.
    """
    w = np.asarray(weights, dtype=np.float64).ravel()
    if w.size == 0:
        raise ValueError("weights must be nonempty")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if not step > 0:
        raise ValueError("step must be positive")
    total = math.fsum(w)
    if total == 0:
        raise ValueError("weights have zero total mass")
    if abs(total - 1.0) > RENORMALIZE_TOL:
        raise ValueError(f"weights sum to {total!r}; expected 1 within {RENORMALIZE_TOL}")
    if abs(total - 1.0) > MASS_TOL:
        w = w / total
    nz = np.flatnonzero(w)
    lo, hi = nz[0], nz[-1]
    return GridPmf(origin + lo * step, step, w[lo : hi + 1])


def point_mass(at: float = 0.0, step: float = 1.0) -> GridPmf:
    return GridPmf(at, step, np.ones(1))


def moments(p: GridPmf) -> Moments:
    x, w = p.points, p.weights
    mean = math.fsum(w * x)
    second = math.fsum(w * x * x)
    # centered sum: same quantity as second - mean**2 without the cancellation
    variance = math.fsum(w * (x - mean) ** 2)
    return Moments(mean, variance, second)


def mean(p: GridPmf) -> float:
    return moments(p).mean


def variance(p: GridPmf) -> float:
    return moments(p).variance


def shift(p: GridPmf, delta: float) -> GridPmf:
    return GridPmf(p.origin + delta, p.step, p.weights, p.padded, p.truncation)


def center(p: GridPmf) -> GridPmf:
    """Shift ``p`` so that its mean is zero; weights are untouched."""
    m = mean(p)
    if m == 0.0:
        return p
    out = shift(p, -m)
    # one correction pass absorbs rounding in origin - mean
    residual = mean(out)
    if residual != 0.0:
        out = shift(out, -residual)
    return out


def same_step(a: float, b: float) -> bool:
    return abs(a - b) <= STEP_RTOL * max(abs(a), abs(b))


def convolve(f: GridPmf, g: GridPmf) -> GridPmf:
    """Law of the sum of independent draws from ``f`` and ``g``."""
    if not same_step(f.step, g.step):
        raise ValueError(f"step mismatch: {f.step!r} vs {g.step!r}")
    w = np.convolve(f.weights, g.weights)
    w = np.clip(w, 0.0, None)
    total = math.fsum(w)
    if abs(total - 1.0) > MASS_TOL:
        w = w / total
    return GridPmf(f.origin + g.origin, f.step, w, padded=f.padded or g.padded)


def scale(p: GridPmf, k: int) -> GridPmf:
    """Law of ``k * X`` for a nonzero integer ``k`` on the original step."""
    if int(k) != k or k == 0:
        raise ValueError("scale factor must be a nonzero integer")
    k = int(k)
    n = len(p)
    w = np.zeros((n - 1) * abs(k) + 1)
    w[:: abs(k)] = p.weights
    if k > 0:
        return GridPmf(k * p.origin, p.step, w, p.padded)
    last = p.origin + (n - 1) * p.step
    return GridPmf(k * last, p.step, w[::-1].copy(), p.padded)


def pmf_on_lattice(p: GridPmf, step: float) -> GridPmf:
    """Re-express ``p`` on a finer step that divides its own step."""
    ratio = p.step / step
    k = round(ratio)
    if k < 1 or abs(ratio - k) > 1e-9 * ratio:
        raise ValueError(f"step {step!r} does not divide {p.step!r}")
    if k == 1:
        return GridPmf(p.origin, step, p.weights, p.padded, p.truncation)
    w = np.zeros((len(p) - 1) * k + 1)
    w[::k] = p.weights
    return GridPmf(p.origin, step, w, p.padded, p.truncation)


def total_variation(a: GridPmf, b: GridPmf, atol: float = 1e-6) -> float:
    """Total-variation distance, matching atoms whose positions agree to ``atol``."""
    pts = np.concatenate([a.points[a.weights > 0], b.points[b.weights > 0]])
    wts = np.concatenate([a.weights[a.weights > 0], -b.weights[b.weights > 0]])
    order = np.argsort(pts, kind="stable")
    pts, wts = pts[order], wts[order]
    total, i = 0.0, 0
    while i < pts.size:
        j = i
        acc = 0.0
        while j < pts.size and pts[j] - pts[i] <= atol:
            acc += wts[j]
            j += 1
        total += abs(acc)
        i = j
    return 0.5 * total


# ---------------------------------------------------------------------------
# builders for the laws used in the experiments


def bernoulli(p: float) -> GridPmf:
    if not 0.0 < p < 1.0:
        raise ValueError("bernoulli parameter must lie in (0, 1)")
    return GridPmf(0.0, 1.0, np.array([1.0 - p, p]))


def binomial(n: int, p: float = 0.5) -> GridPmf:
    if n < 1 or int(n) != n:
        raise ValueError("binomial n must be a positive integer")
    if not 0.0 < p < 1.0:
        raise ValueError("binomial p must lie in (0, 1)")
    return make_grid_pmf(0.0, 1.0, stats.binom.pmf(np.arange(n + 1), n, p))


def uniform_n(n: int) -> GridPmf:
    """Uniform law on ``{0, 1, ..., n-1}``."""
    if n < 1 or int(n) != n:
        raise ValueError("uniform_n needs a positive integer number of points")
    return GridPmf(0.0, 1.0, np.full(int(n), 1.0 / n))


def sum_two_uniforms(n: int) -> GridPmf:
    u = uniform_n(n)
    return convolve(u, u)


def squared_sum_two_uniforms(n: int) -> GridPmf:
    """Square the triangular weights of :func:`sum_two_uniforms` and renormalize."""
    t = sum_two_uniforms(n)
    # squaring the integer counts keeps the weights exact
    counts = np.rint(t.weights * n * n) ** 2
    return GridPmf(t.origin, t.step, counts / counts.sum())


def _check_tail_tol(tail_tol: float) -> None:
    if not 0.0 < tail_tol <= 1e-8:
        raise ValueError("tail_tol must lie in (0, 1e-8]")


def poisson_centered(t: float, tail_tol: float = 1e-12) -> GridPmf:
    """Centered Poisson(t), cut where the upper tail drops below ``tail_tol``."""
    if not t > 0:
        raise ValueError("Poisson rate must be positive")
    _check_tail_tol(tail_tol)
    hi = int(stats.poisson.isf(tail_tol, t))
    while stats.poisson.sf(hi, t) > tail_tol:
        hi += 1
    k = np.arange(hi + 1)
    w = stats.poisson.pmf(k, t)
    omitted = float(stats.poisson.sf(hi, t))
    w = w / w.sum()
    nz = np.flatnonzero(w)
    raw = GridPmf(0.0, 1.0, w[: nz[-1] + 1])
    out = center(raw)
    return GridPmf(out.origin, 1.0, out.weights, truncation=Truncation(0.0, float(nz[-1]), omitted))


def gaussian_discretized(sd: float = 1.0, step: float = 1.0, tail_tol: float = 1e-10) -> GridPmf:
    """N(0, sd**2) binned onto ``step * Z``; each point gets the mass of its cell."""
    if not sd > 0 or not step > 0:
        raise ValueError("sd and step must be positive")
    _check_tail_tol(tail_tol)
    # symmetric cut: mass beyond (k + 1/2) * step on both sides <= tail_tol
    k = 0
    while 2 * stats.norm.sf((k + 0.5) * step / sd) > tail_tol:
        k += 1
    edges = (np.arange(-k, k + 2) - 0.5) * step / sd
    w = np.diff(stats.norm.cdf(edges))
    # cdf differences lose the far tails to cancellation; use sf on the upper half
    upper = np.arange(k + 1)
    w_up = stats.norm.sf((upper - 0.5) * step / sd) - stats.norm.sf((upper + 0.5) * step / sd)
    w[k:] = w_up
    w[:k] = w_up[1:][::-1]
    omitted = 2 * float(stats.norm.sf((k + 0.5) * step / sd))
    w = w / math.fsum(w)
    return GridPmf(-k * step, step, w, truncation=Truncation(-k * step, k * step, omitted))


BUILDERS = {
    "bernoulli": bernoulli,
    "binomial": binomial,
    "uniform": uniform_n,
    "sum2": sum_two_uniforms,
    "sq": squared_sum_two_uniforms,
    "poisson": poisson_centered,
    "gauss": gaussian_discretized,
}


def example_pmf(name: str, *params: float) -> GridPmf:
    """Build one of the named example laws (see :data:`BUILDERS`)."""
    aliases = {
        "uniform_n": "uniform",
        "sum_two_uniforms": "sum2",
        "squared_sum_two_uniforms": "sq",
        "poisson_centered": "poisson",
        "gaussian_discretized": "gauss",
        "gaussian": "gauss",
    }
    key = aliases.get(name, name)
    if key not in BUILDERS:
        raise ValueError(f"unknown law {name!r}; choose from {sorted(BUILDERS)}")
    if key in ("binomial", "uniform", "sum2", "sq") and params:
        params = (int(params[0]),) + tuple(params[1:])
    return BUILDERS[key](*params)


def parse_builder(spec: str) -> GridPmf:
    """Parse ``name:p1,p2`` strings such as ``bernoulli:0.5`` or ``binom4``."""
    spec = spec.strip()
    name, _, rest = spec.partition(":")
    params = [float(tok) for tok in rest.split(",") if tok.strip()] if rest else []
    if name.startswith("binom") and name[5:].isdigit():
        return binomial(int(name[5:]), *(params or [0.5]))
    return example_pmf(name, *params)


# ---------------------------------------------------------------------------
# noise lattices


def lattice(lo: float, hi: float, step: float, offset: float = 0.0) -> np.ndarray:
    """Points ``offset + k * step`` lying in ``[lo, hi]``, in increasing order."""
    kmin = math.ceil((lo - offset) / step - 1e-9)
    kmax = math.floor((hi - offset) / step + 1e-9)
    return offset + step * np.arange(kmin, kmax + 1)


def default_noise_window(f: GridPmf, epsilon: float) -> tuple[float, float]:
    """Symmetric window ``[-W, W]`` reaching ``ceil(4 sqrt(eps))`` steps past the span of ``f``."""
    x = f.points
    m = mean(f)
    reach = max(abs(x[0] - m), abs(x[-1] - m))
    w = reach + math.ceil(4 * math.sqrt(epsilon) / f.step) * f.step
    return (-w, w)
