"""Least favorable noise on a lattice by fully corrective Frank-Wolfe.

For a fixed lattice ``offset + step * Z`` the feasible noise laws

    P = {g >= 0, sum g = 1, sum y g = 0, sum y**2 g <= eps}

form a polytope and ``phi`` is convex on it, so Frank-Wolfe with an exact
vertex oracle applies.  The objective is invariant under shifts of ``g`` but
the mean-zero constraint is not invariant under shifts that leave the lattice,
so the lattice offset is an extra one-dimensional parameter; :func:`solve`
scans it and refines the best bracket.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from . import certificate as cert_mod
from .conditional import PosteriorMap, dual_penalty, map_blocks, phi_from_weights, weighted_square_sum
from .distributions import (
    GridPmf,
    center,
    default_noise_window,
    lattice,
    make_grid_pmf,
    moments,
    same_step,
)

log = logging.getLogger(__name__)

INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class InfeasibleWindow(ValueError):
    pass


@dataclass
class SolverConfig:
    epsilon: float
    window: tuple[float, float] | None = None
    step: float | None = None
    offset: float | None = None
    max_iters: int = 500
    fw_gap_tol: float = 1e-9
    line_search_tol: float = 1e-12
    corrective: bool = True
    support_tol: float = 1e-8
    offset_grid: int = 16
    threads: int = 1

    def __post_init__(self) -> None:
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("variance_bound must be positive")
        if self.window is not None:
            lo, hi = self.window[0], self.window[1]
            if not lo < 0 < hi:
                raise ValueError("window must satisfy y_min < 0 < y_max")
        for name in ("fw_gap_tol", "line_search_tol", "support_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iters < 1 or self.offset_grid < 1:
            raise ValueError("max_iters and offset_grid must be positive")


@dataclass
class SolveReport:
    g_star: GridPmf
    primal_value: float
    dual_bound: float | None
    duality_gap: float | None
    iterations: int
    trace: list[tuple[int, float, float]]
    active_support: list[tuple[float, float]]
    fw_gap: float
    converged: bool
    epsilon: float
    offset: float
    window: tuple[float, float]
    centering_shift: float = 0.0
    offset_scan: list[tuple[float, float]] = field(default_factory=list)
    certificate: "cert_mod.DualCertificate | None" = None
    verification: "cert_mod.VerificationReport | None" = None
    closed_form: bool = False


# ---------------------------------------------------------------------------
# linear minimization over the moment polytope


def lp_vertex(
    costs: np.ndarray, y: np.ndarray, epsilon: float, zero_tol: float = 1e-12
) -> tuple[tuple[int, ...], tuple[float, ...]]:
    """Exact minimizer of ``sum c(y) g(y)`` over P, as (indices, weights).

    Vertices of P carry at most three atoms: the atom at 0, a pair ``a < 0 < b``
    with variance ``|a| b <= eps``, or a triple whose variance equals ``eps``.
    Ties go to the lexicographically smallest support.
    """
    c = np.asarray(costs, dtype=float)
    y = np.asarray(y, dtype=float)
    if c.shape != y.shape or y.ndim != 1:
        raise ValueError("costs and grid must be 1-D of equal length")
    if not np.all(np.isfinite(c)):
        raise ValueError("costs must be finite")
    tie = 1e-14 * max(1.0, float(np.max(np.abs(c))))
    ztol = zero_tol * max(1.0, float(np.max(np.abs(y))))
    is_zero = np.abs(y) <= ztol
    cands: list[tuple[float, tuple[int, ...], tuple[float, ...]]] = []

    def keep(val: np.ndarray, make) -> None:
        # every candidate within `tie` of this block's best goes to the final lex tie-break
        if not np.isfinite(val).any():
            return
        lowest = val.min()
        for pos in zip(*np.nonzero(val <= lowest + tie)):
            cands.append(make(*pos))

    zero = np.flatnonzero(is_zero)
    if zero.size:
        cands.append((float(c[zero[0]]), (int(zero[0]),), (1.0,)))

    neg = np.flatnonzero((y < 0) & ~is_zero)
    pos = np.flatnonzero((y > 0) & ~is_zero)
    if neg.size and pos.size:
        a = y[neg][:, None]
        b = y[pos][None, :]
        wa = b / (b - a)
        wb = -a / (b - a)
        val = np.where(-a * b <= epsilon * (1 + 1e-12), wa * c[neg][:, None] + wb * c[pos][None, :], np.inf)
        keep(val, lambda i, j: (float(val[i, j]), (int(neg[i]), int(pos[j])), (float(wa[i, j]), float(wb[i, j]))))

    n = y.size
    for mid in range(1, n - 1):
        b = y[mid]
        a = y[:mid][:, None]
        cc = y[mid + 1 :][None, :]
        if not (a[0, 0] < 0 < cc[0, -1]):
            continue
        wa = (epsilon + b * cc) / ((a - b) * (a - cc))
        wb = (epsilon + a * cc) / ((b - a) * (b - cc))
        wc = (epsilon + a * b) / ((cc - a) * (cc - b))
        ok = (wa > 0) & (wb > 0) & (wc > 0)
        if not ok.any():
            continue
        val = np.where(ok, wa * c[:mid][:, None] + wb * c[mid] + wc * c[mid + 1 :][None, :], np.inf)
        keep(
            val,
            lambda i, j, mid=mid, val=val, wa=wa, wb=wb, wc=wc: (
                float(val[i, j]),
                (int(i), mid, mid + 1 + int(j)),
                (float(wa[i, j]), float(wb[i, j]), float(wc[i, j])),
            ),
        )

    if not cands:
        raise InfeasibleWindow("no feasible noise law on this window: need 0 or points on both sides of 0")
    best = min(v for v, _, _ in cands)
    tied = [cand for cand in cands if cand[0] <= best + tie]
    _, idx, wts = min(tied, key=lambda cand: tuple(y[list(cand[1])]))
    return idx, wts


def lp_oracle(costs: np.ndarray, y_grid: np.ndarray, epsilon: float) -> GridPmf:
    """Vertex of P minimizing the linear cost, as a law on the lattice ``y_grid``."""
    y_grid = np.asarray(y_grid, dtype=float)
    idx, wts = lp_vertex(costs, y_grid, epsilon)
    w = np.zeros(y_grid.size)
    w[list(idx)] = wts
    step = float(y_grid[1] - y_grid[0]) if y_grid.size > 1 else 1.0
    return make_grid_pmf(float(y_grid[0]), step, w)
# ---------------------------------------------------------------------------
# one lattice


class _Lattice:
    """The convex problem on the fixed lattice ``y`` (dense weights over ``y``)."""

    def __init__(self, f: GridPmf, y: np.ndarray, epsilon: float, threads: int = 1):
        self.f = f
        self.y = y
        self.eps = epsilon
        self.threads = threads
        self.x = f.points
        self.fw = f.weights
        self.second = moments(f).second_moment
        self.origin = float(y[0])
        # s-index of (x_i, y_j) is i + j
        self.s_index = np.arange(self.x.size)[:, None] + np.arange(y.size)[None, :]

    def phi(self, g: np.ndarray) -> float:
        return phi_from_weights(self.f, g)

    def posterior(self, g: np.ndarray) -> tuple[np.ndarray, np.ndarray, PosteriorMap]:
        mass = np.convolve(self.fw, g)
        first = np.convolve(self.fw * self.x, g)
        flags = mass > 0
        lam = np.zeros_like(mass)
        lam[flags] = first[flags] / mass[flags]
        idx = np.flatnonzero(flags)
        if idx.size < flags.size:
            lam = np.interp(np.arange(mass.size), idx, lam[idx])
        pm = PosteriorMap(float(self.x[0] + self.origin), self.f.step, lam, flags)
        return mass, lam, pm

    def gradient(self, g: np.ndarray) -> np.ndarray:
        """Envelope gradient with the clamped posterior mean (a valid minorant)."""
        _, _, pm = self.posterior(g)
        return self.second - dual_penalty(self.f, pm, self.y, threads=self.threads)

    def atom_slopes(self, g: np.ndarray) -> np.ndarray:
        """Exact one-sided derivative of ``phi`` towards each single atom.

        Where ``f*g`` has no mass, a new atom at ``y`` reveals ``x = s - y``
        exactly, so that term of ``D(y)`` vanishes instead of using the clamped
        posterior mean.  Any vertex with a negative cost under these slopes is
        a genuine descent direction.
        """
        mass, lam, _ = self.posterior(g)

        def block(i: int, j: int) -> np.ndarray:
            s = self.s_index[:, i:j]
            resid = np.where(mass[s] > 0, self.x[:, None] - lam[s], 0.0)
            return weighted_square_sum(self.fw, resid)

        return self.second - map_blocks(block, self.y.size, self.threads)

    def costs_for(self, lam: np.ndarray) -> np.ndarray:
        """``sigma**2 - D(y)`` for a posterior map given by its values on the s-grid."""

        def block(i: int, j: int) -> np.ndarray:
            resid = self.x[:, None] - lam[self.s_index[:, i:j]]
            return weighted_square_sum(self.fw, resid)

        return self.second - map_blocks(block, self.y.size, self.threads)

    def grad_hess(self, g: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Gradient and Hessian of ``phi`` restricted to the atoms ``idx``.

        With ``M = f*g`` and ``lam`` the posterior mean,
        ``H[j, k] = 2 sum_s f(s-y_j) f(s-y_k) (s-y_j-lam) (s-y_k-lam) / M(s)``.
        """
        mass, lam, _ = self.posterior(g)
        s = self.s_index[:, idx]
        resid = self.x[:, None] - lam[s]
        grad = self.second - weighted_square_sum(self.fw, resid)
        z = np.zeros((mass.size, idx.size))
        cols = np.broadcast_to(np.arange(idx.size), s.shape)
        z[s, cols] = self.fw[:, None] * resid
        flags = mass > 0
        z[flags] /= np.sqrt(mass[flags])[:, None]
        z[~flags] = 0.0
        return grad, 2.0 * z.T @ z

    def feasible(self, g: np.ndarray, tol: float = 1e-10) -> bool:
        return (
            bool(np.all(g >= 0))
            and abs(math.fsum(g) - 1.0) <= tol
            and abs(math.fsum(g * self.y)) <= tol
            and math.fsum(g * self.y**2) <= self.eps + tol
        )


def _golden(fun, tol: float) -> tuple[float, float]:
    """Minimize a convex function of ``t`` on ``[0, 1]`` by golden-section search."""
    lo, hi = 0.0, 1.0
    a = hi - INV_GOLDEN * (hi - lo)
    b = lo + INV_GOLDEN * (hi - lo)
    fa, fb = fun(a), fun(b)
    while hi - lo > tol:
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - INV_GOLDEN * (hi - lo)
            fa = fun(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + INV_GOLDEN * (hi - lo)
            fb = fun(b)
    t, ft = (a, fa) if fa <= fb else (b, fb)
    f1 = fun(1.0)
    if f1 <= ft:
        return 1.0, f1
    return t, ft


def _corrective(prob: _Lattice, g: np.ndarray, idx: np.ndarray, max_steps: int = 200) -> np.ndarray:
    """Minimize ``phi`` over P restricted to the atoms ``idx`` (active-set Newton).

    Free atoms move along Newton directions projected onto the equality
    constraints (mass, mean and, when it binds, the variance); atoms that hit
    zero leave the free set and re-enter when their reduced cost turns negative.
    """
    w = g[idx].copy()
    ya = prob.y[idx]
    rows = np.vstack([np.ones_like(ya), ya, ya**2])
    free = w > 0
    var_tol = 1e-13 * max(1.0, prob.eps)
    var_active = prob.eps - rows[2] @ w <= var_tol

    def full(v: np.ndarray) -> np.ndarray:
        out = np.zeros_like(g)
        out[idx] = v
        return out

    current = prob.phi(full(w))
    for _ in range(max_steps):
        grad, hess = prob.grad_hess(full(w), idx)
        e = rows if var_active else rows[:2]
        fr = np.flatnonzero(free)
        if fr.size == 0:
            break
        hf = hess[np.ix_(fr, fr)]
        # null-space Newton: steps stay exactly on the equality constraints
        _, sv, vt = np.linalg.svd(e[:, fr])
        rank = int(np.sum(sv > 1e-12 * max(1.0, sv[0])))
        basis = vt[rank:].T
        d = np.zeros_like(w)
        if basis.shape[1]:
            rh = basis.T @ hf @ basis
            rh += 1e-13 * max(1.0, np.trace(rh)) * np.eye(rh.shape[0])
            p = np.linalg.lstsq(rh, -(basis.T @ grad[fr]), rcond=None)[0]
            d[fr] = basis @ p
        size = float(np.max(np.abs(d)))
        if size > 1.0:
            # flat directions (nearly linear objective) blow the step up;
            # weights live in [0, 1] so only its direction matters
            d /= size
        if np.max(np.abs(d)) <= 1e-13:
            # stationary on this face: multipliers decide whether to leave it
            mult = np.linalg.lstsq(e[:, fr].T, grad[fr], rcond=None)[0]
            changed = False
            if var_active and mult[2] > 1e-13:
                var_active = False
                changed = True
            # zero-weight atoms need the exact one-sided slope, not the clamped one
            slopes = np.where(free, grad, prob.atom_slopes(full(w))[idx])
            reduced = slopes - mult @ e
            enter = np.flatnonzero(~free & (reduced < -1e-13))
            if enter.size:
                free[enter] = True
                changed = True
            if not changed:
                break
            continue
        blocked = free & (w <= 0.0) & (d < 0)
        if blocked.any():
            # degenerate step: an atom at zero wants to go negative, so it stays out
            free &= ~blocked
            continue
        t = 1.0
        shrink = free & (d < 0)
        if shrink.any():
            t = min(t, float(np.min(-w[shrink] / d[shrink])))
        dv = rows[2] @ d
        if not var_active and dv > 0:
            t = min(t, max(0.0, (prob.eps - rows[2] @ w) / dv))
        slope = float(grad @ d)
        # near the optimum the decrease drops below the rounding of phi itself
        noise = 8 * np.finfo(float).eps * max(1.0, abs(current))
        while t > 1e-16:
            trial = prob.phi(full(w + t * d))
            if trial <= current + 1e-4 * t * slope + noise:
                break
            t *= 0.5
        else:
            break
        w = w + t * d
        current = trial
        hit = free & (w <= 1e-15)
        w[hit] = 0.0
        free &= ~hit
        if not var_active and prob.eps - rows[2] @ w <= var_tol:
            var_active = True
    return full(_restore(np.clip(w, 0.0, None), rows, prob.eps))


def _restore(w: np.ndarray, rows: np.ndarray, eps: float) -> np.ndarray:
    """Least-norm correction of rounding drift in mass and mean on the support."""
    sup = np.flatnonzero(w > 0)
    if sup.size < 2:
        return w
    e = rows[:2, sup]
    resid = np.array([1.0 - math.fsum(w), -math.fsum(w * rows[1])])
    delta = np.linalg.lstsq(e, resid, rcond=None)[0]
    out = w.copy()
    out[sup] += delta
    if np.any(out[sup] < 0) or math.fsum(out * rows[2]) > eps + 1e-12:
        return w
    return out


@dataclass
class _LatticeRun:
    offset: float
    y: np.ndarray
    g: np.ndarray
    primal: float
    fw_gap: float
    iterations: int
    converged: bool
    trace: list[tuple[int, float, float]]


def _direction_search(
    prob: _Lattice, g: np.ndarray, value: float, v0: np.ndarray, tol: float, max_inner: int = 30
) -> tuple[np.ndarray, float]:
    """Steepest feasible direction at ``g`` and the best certified Frank-Wolfe gap.

    Where ``f*g`` has no mass the posterior mean is free, and every choice of
    it gives a valid linear minorant of ``phi``.  The exact one-sided slope
    towards ``v`` is ``psi(v) = max over that choice of <c, v - g>``, which is
    convex in ``v``; Frank-Wolfe on ``psi`` finds the mixture of atoms that
    descends fastest.  Each posterior map tried along the way yields its own
    Frank-Wolfe gap for ``phi``, so the smallest one is a valid bound.
    """
    mass, lam, _ = prob.posterior(g)
    empty = mass <= 0
    fw, xw = prob.fw, prob.fw * prob.x
    y, eps = prob.y, prob.eps

    def psi_parts(v: np.ndarray) -> tuple[float, np.ndarray]:
        mv, nv = np.convolve(fw, v), np.convolve(xw, v)
        lin = math.fsum((2 * lam * nv - lam * lam * mv)[~empty])
        hit = empty & (mv > 0)
        mu = lam.copy()
        mu[hit] = nv[hit] / mv[hit]
        return lin + math.fsum(nv[hit] ** 2 / mv[hit]) - value, mu

    best_gap = math.inf
    v_bar = v0
    psi_bar, mu = psi_parts(v_bar)
    for _ in range(max_inner):
        c = prob.costs_for(mu)
        w = _vertex(c, y, eps)
        best_gap = min(best_gap, float(c @ g) - float(c @ w))
        inner_gap = float(c @ (v_bar - w))
        if best_gap <= tol or inner_gap <= 1e-12 * max(1.0, abs(value)):
            break
        step = w - v_bar
        t, _ = _golden(lambda r: psi_parts(v_bar + r * step)[0], 1e-10)
        if t <= 0.0:
            break
        v_bar = v_bar + t * step
        psi_bar, mu = psi_parts(v_bar)
    return v_bar, best_gap


def _interior_law(y: np.ndarray, epsilon: float) -> np.ndarray | None:
    """A law in P charging every lattice point, or None when P has no interior.

    An exponentially tilted uniform law with mean exactly zero, mixed with
    the least-variance vertex so that the variance bound holds strictly.
    """
    if not (y[0] < 0 < y[-1]):
        return None
    idx, wts = lp_vertex(y**2, y, epsilon)
    tight = np.zeros(y.size)
    tight[list(idx)] = wts
    var_tight = float(tight @ y**2)
    if var_tight >= epsilon * (1 - 1e-9):
        return None
    scale = max(abs(y[0]), abs(y[-1]))

    def tilted(theta: float) -> np.ndarray:
        w = np.exp(theta * (y / scale) - np.max(theta * (y / scale)))
        return w / w.sum()

    theta = brentq(lambda th: float(tilted(th) @ y), -50.0, 50.0, xtol=1e-14) if abs(float(tilted(0.0) @ y)) > 0 else 0.0
    spread = tilted(theta)
    # remove the last rounding of the mean on the two points nearest zero
    var_spread = float(spread @ y**2)
    rho = 0.5 * min(1.0, (epsilon - var_tight) / max(var_spread - var_tight, 1e-300))
    law = rho * spread + (1 - rho) * tight
    return law


def _interior_restart(prob: _Lattice, g: np.ndarray, value: float, fraction: float = 1e-2) -> tuple[np.ndarray, float]:
    """Re-optimize over every lattice point from a point with full support.

    Used when no vertex direction descends: with every weight positive the
    objective is smooth, and the active-set Newton iteration then follows the
    curvature jointly over all atoms instead of one vertex at a time.
    """
    law = _interior_law(prob.y, prob.eps)
    if law is None:
        return g, value
    start = (1 - fraction) * g + fraction * law
    g_try = _corrective(prob, start, np.arange(prob.y.size), max_steps=500)
    v_try = prob.phi(g_try)
    if v_try < value and prob.feasible(g_try):
        return g_try, v_try
    return g, value


def _best_step(
    prob: _Lattice, g: np.ndarray, value: float, targets: tuple[np.ndarray, ...], tol: float
) -> tuple[np.ndarray, float]:
    """Exact line search towards each target; the best point found (or ``g``)."""
    best, best_value = g, value
    for target in targets:
        direction = target - g
        t, trial = _golden(lambda s: prob.phi(g + s * direction), tol)
        if trial < best_value:
            best, best_value = g + t * direction, trial
    return best, best_value


def _vertex(costs: np.ndarray, y: np.ndarray, epsilon: float) -> np.ndarray:
    idx, wts = lp_vertex(costs, y, epsilon)
    v = np.zeros(y.size)
    v[list(idx)] = wts
    return v


class _Smoothed:
    """``g -> phi((1 - delta) g + delta u)`` for a law ``u`` charging every point.

    Every sum then carries mass, so the objective is smooth on all of P and
    its gradient is exact.  By convexity its minimum over P is at most
    ``(1 - delta) phi* + delta phi(u)``, which turns a certified gap for the
    smoothed problem into a lower bound for the original one.
    """

    def __init__(self, base: _Lattice, u: np.ndarray, delta: float):
        self.base = base
        self.u = u
        self.delta = delta
        self.y = base.y
        self.eps = base.eps
        self.feasible = base.feasible

    def mix(self, g: np.ndarray) -> np.ndarray:
        return (1.0 - self.delta) * g + self.delta * self.u

    def phi(self, g: np.ndarray) -> float:
        return self.base.phi(self.mix(g))

    def gradient(self, g: np.ndarray) -> np.ndarray:
        return (1.0 - self.delta) * self.base.gradient(self.mix(g))

    atom_slopes = gradient

    def grad_hess(self, g: np.ndarray, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad, hess = self.base.grad_hess(self.mix(g), idx)
        return (1.0 - self.delta) * grad, (1.0 - self.delta) ** 2 * hess

    def lower_bound(self, smoothed_lower: float) -> float:
        return (smoothed_lower - self.delta * self.base.phi(self.u)) / (1.0 - self.delta)


def _descend(prob, g: np.ndarray, cfg: SolverConfig, budget: int, trace: list, smooth: bool = False):
    """Frank-Wolfe with line search and corrective Newton steps from ``g``.

    Returns ``(g, value, gap, iterations, converged)``; ``gap`` is a certified
    Frank-Wolfe gap for ``prob``.
    """
    value = prob.phi(g)
    gap = math.inf
    gaps: list[float] = []
    stalled = 0
    it = 0
    first = len(trace)
    for it in range(1, budget + 1):
        # the clamped envelope gradient is a true linear minorant of phi, so
        # its Frank-Wolfe gap bounds the suboptimality
        grad = prob.gradient(g)
        v = _vertex(grad, prob.y, prob.eps)
        gap = float(grad @ (g - v))
        if gap <= cfg.fw_gap_tol:
            trace.append((first + it, value, gap))
            return g, value, gap, it, True
        slopes_v = v if smooth else _vertex(prob.atom_slopes(g), prob.y, prob.eps)
        g_next, next_value = _best_step(prob, g, value, (v, slopes_v), cfg.line_search_tol)
        mixed = v
        # rounding-level decreases do not count as progress
        noise = 8 * np.finfo(float).eps * max(1.0, abs(value))
        if next_value >= value - noise and not smooth:
            # phi is not smooth where f*g has no mass and neither vertex
            # descends: search the free posterior values there for a real
            # descent direction and a tighter certified gap
            mixed, searched = _direction_search(prob, g, value, v, cfg.fw_gap_tol)
            gap = min(gap, searched)
            if gap <= cfg.fw_gap_tol:
                trace.append((first + it, value, gap))
                return g, value, gap, it, True
            g_next, next_value = _best_step(prob, g, value, (mixed,), cfg.line_search_tol)
            if next_value >= value - noise:
                g_next, next_value = _interior_restart(prob, g, value)
        trace.append((first + it, value, gap))
        if cfg.corrective:
            atoms = np.flatnonzero((g_next > 0) | (v > 0) | (mixed > 0) | (slopes_v > 0))
            g_corr = _corrective(prob, g_next, atoms)
            corr_value = prob.phi(g_corr)
            if corr_value <= next_value + noise and prob.feasible(g_corr):
                g_next, next_value = g_corr, corr_value
        stalled = stalled + 1 if next_value >= value - noise else 0
        gaps.append(gap)
        # sublinear crawling along a kink: hand over to the caller
        crawling = it >= 2 * CRAWL_WINDOW and min(gaps[-CRAWL_WINDOW:]) > 0.5 * min(gaps[-2 * CRAWL_WINDOW : -CRAWL_WINDOW])
        if np.array_equal(g_next, g) or stalled >= 25 or crawling:
            log.debug("no progress at iteration %d, gap %.3g", it, gap)
            if not np.array_equal(g_next, g) and next_value < value:
                g, value = g_next, next_value
            break
        g, value = g_next, next_value
    return g, value, gap, it, False


def _borrowed_gap(prob: _Lattice, g: np.ndarray, lam_other: np.ndarray) -> float:
    """Certified gap at ``g`` using ``lam_other`` on the sums where ``f*g`` is empty.

    There any posterior value gives a valid minorant; the smoothed problems
    supply values close to the optimal ones.
    """
    mass, lam, _ = prob.posterior(g)
    costs = prob.costs_for(np.where(mass > 0, lam, lam_other))
    v = _vertex(costs, prob.y, prob.eps)
    return float(costs @ (g - v))


def _refine_empty(prob: _Lattice, g: np.ndarray, lam: np.ndarray, max_evals: int = 2000) -> float:
    """Lower the certified gap at ``g`` by tuning ``lam`` on the empty sums."""
    mass = prob.posterior(g)[0]
    empty = np.flatnonzero(mass <= 0)
    if empty.size == 0:
        return _borrowed_gap(prob, g, lam)
    trial = lam.copy()

    def gap_of(values: np.ndarray) -> float:
        trial[empty] = values
        return _borrowed_gap(prob, g, trial)

    res = minimize(gap_of, lam[empty], method="Powell", options={"maxfev": max_evals, "xtol": 1e-12, "ftol": 1e-15})
    return min(float(res.fun), _borrowed_gap(prob, g, lam))


def _extrapolate(points: list[tuple[float, np.ndarray]]) -> np.ndarray:
    """Value at zero of the polynomial through ``(delta, lam)`` pairs (Lagrange)."""
    out = np.zeros_like(points[0][1])
    for i, (di, li) in enumerate(points):
        weight = 1.0
        for j, (dj, _) in enumerate(points):
            if j != i:
                weight *= dj / (dj - di)
        out += weight * li
    return out


# iterations over which the gap must at least halve
CRAWL_WINDOW = 20

# smoothing levels tried when the plain iteration cannot certify its point
SMOOTHING_LEVELS = tuple(10.0**-k for k in range(2, 10))


def _run_lattice(f: GridPmf, y: np.ndarray, offset: float, cfg: SolverConfig) -> _LatticeRun:
    prob = _Lattice(f, y, cfg.epsilon, cfg.threads)
    # start from the tightest vertex around zero
    idx, wts = lp_vertex(y**2, y, cfg.epsilon)
    g = np.zeros(y.size)
    g[list(idx)] = wts
    trace: list[tuple[int, float, float]] = []
    g, value, gap, used, converged = _descend(prob, g, cfg, cfg.max_iters, trace)
    law = None if converged or used >= cfg.max_iters else _interior_law(y, cfg.epsilon)
    if law is not None:
        g, value, lower, used = _smoothing_fallback(prob, g, value, value - gap, law, cfg, used, trace)
        gap = value - lower
        converged = gap <= cfg.fw_gap_tol
    return _LatticeRun(offset, y, g, value, gap, used, converged, trace)


def _smoothing_fallback(prob: _Lattice, g, value, lower, law, cfg: SolverConfig, used: int, trace: list):
    """Follow smoothed problems towards zero smoothing from a stalled point.

    Where ``f*g`` has empty sums the objective has kinks that stall the plain
    iteration.  Each smoothed problem yields a candidate point and a certified
    lower bound on the optimum; its posterior on the empty sums, extrapolated
    to zero smoothing, certifies the plain candidates.
    Returns ``(g, value, lower, used)``.
    """
    history: list[tuple[float, np.ndarray]] = []
    h = g
    for delta in SMOOTHING_LEVELS:
        if used >= cfg.max_iters or value - lower <= cfg.fw_gap_tol:
            break
        smoothed = _Smoothed(prob, law, delta)
        h, h_value, h_gap, n, _ = _descend(smoothed, h, cfg, cfg.max_iters - used, trace, smooth=True)
        used += n
        lower = max(lower, smoothed.lower_bound(h_value - h_gap))
        history.append((delta, prob.posterior(smoothed.mix(h))[1]))
        # the smoothed point itself, and its polish on the plain objective
        # (its delta-sized weights are either spurious or mis-sized)
        polished = _corrective(prob, h, np.flatnonzero(h > 0), max_steps=500)
        for cand in (h, polished):
            c_value = prob.phi(cand)
            if prob.feasible(cand) and c_value < value:
                g, value = cand, c_value
        lower = max(lower, value - _certify_point(prob, g, history))
    if value - lower > cfg.fw_gap_tol and history:
        lower = max(lower, value - _refine_empty(prob, g, _best_guess(prob, g, history)))
    return g, value, lower, used


def _guesses(history: list[tuple[float, np.ndarray]]) -> list[np.ndarray]:
    """Smoothed posteriors and their extrapolations (through 2 and 3 levels) to zero."""
    out = [history[-1][1]]
    # the smoothed posterior is smooth in delta near zero
    out += [_extrapolate(history[-k:]) for k in (2, 3) if len(history) >= k]
    return out


def _best_guess(prob: _Lattice, g: np.ndarray, history) -> np.ndarray:
    return min(_guesses(history), key=lambda lam: _borrowed_gap(prob, g, lam))


def _certify_point(prob: _Lattice, g: np.ndarray, history) -> float:
    """Smallest certified gap at ``g`` from the clamped gradient and the borrowed posteriors."""
    grad = prob.gradient(g)
    best = float(grad @ (g - _vertex(grad, prob.y, prob.eps)))
    for lam in _guesses(history):
        best = min(best, _borrowed_gap(prob, g, lam))
    return best


# ---------------------------------------------------------------------------
# driver


def _window(f: GridPmf, cfg: SolverConfig) -> tuple[float, float]:
    if cfg.window is not None:
        return (float(cfg.window[0]), float(cfg.window[1]))
    return default_noise_window(f, cfg.epsilon)


def _offsets_run(f: GridPmf, cfg: SolverConfig, window: tuple[float, float]):
    h = f.step
    runs: dict[float, _LatticeRun] = {}

    def run(c: float) -> _LatticeRun:
        c = float(c % h)
        if c not in runs:
            y = lattice(window[0], window[1], h, c)
            try:
                runs[c] = _run_lattice(f, y, c, cfg)
            except InfeasibleWindow:
                # this lattice carries no mean-zero law within the variance bound
                runs[c] = _LatticeRun(c, y, np.zeros(y.size), math.inf, math.inf, 0, False, [])
        return runs[c]

    if cfg.offset is not None:
        only = run(cfg.offset)
        if not math.isfinite(only.primal):
            raise InfeasibleWindow(f"lattice offset {cfg.offset!r} admits no feasible noise law")
        return only, runs

    k = cfg.offset_grid
    scan = [run(h * i / k) for i in range(k)]
    best = min(scan, key=lambda r: (r.primal, r.offset))
    if not math.isfinite(best.primal):
        raise InfeasibleWindow("no lattice offset admits a feasible noise law on this window")
    if k > 1:
        centre = best.offset
        with np.errstate(invalid="ignore"):
            res = minimize_scalar(
                lambda c: run(c).primal,
                bounds=(centre - h / k, centre + h / k),
                method="bounded",
                options={"xatol": 1e-9 * h, "maxiter": 60},
            )
        refined = run(res.x)
        if not math.isfinite(refined.primal):
            refined = best
        # prefer the scanned lattice unless refinement is a real improvement
        if refined.primal < best.primal - 1e-12 * max(1.0, abs(best.primal)):
            best = min(runs.values(), key=lambda r: (r.primal, r.offset))
    return best, runs


def solve(f: GridPmf, config: SolverConfig) -> SolveReport:
    """Minimize ``var E[X | X + Y]`` over lattice noise laws with ``var Y <= eps``."""
    if config.step is not None and not same_step(config.step, f.step):
        raise ValueError(f"solver step {config.step!r} does not match f.step {f.step!r}")
    fc = center(f)
    shift = fc.origin - f.origin
    window = _window(fc, config)
    best, runs = _offsets_run(fc, config, window)
    if not best.converged:
        log.warning(
            "solver stopped after %d iterations with Frank-Wolfe gap %.3g > %.3g",
            best.iterations, best.fw_gap, config.fw_gap_tol,
        )
    h = fc.step
    g_star = make_grid_pmf(float(best.y[0]), h, best.g)
    active = [(float(p), float(w)) for p, w in zip(g_star.points, g_star.weights) if w > config.support_tol]
    report = SolveReport(
        g_star=g_star,
        primal_value=best.primal - moments(fc).mean ** 2,
        dual_bound=None,
        duality_gap=None,
        iterations=best.iterations,
        trace=best.trace,
        active_support=active,
        fw_gap=best.fw_gap,
        converged=best.converged,
        epsilon=config.epsilon,
        offset=best.offset,
        window=window,
        centering_shift=shift,
        offset_scan=sorted((r.offset, r.primal - moments(fc).mean ** 2) for r in runs.values()),
    )
    lo, hi = window
    pad = 0.25 * (hi - lo)
    audit = (lo - pad, hi + pad)
    certificate = cert_mod.fit_certificate(
        fc, g_star, config.epsilon, audit_window=audit, support_tol=config.support_tol, threads=config.threads
    )
    verification = cert_mod.verify_certificate(certificate, fc, g_star)
    report.certificate = certificate
    report.verification = verification
    report.dual_bound = verification.dual_bound
    report.duality_gap = verification.gap
    return report
