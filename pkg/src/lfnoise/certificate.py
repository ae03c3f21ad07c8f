"""Dual certificates for a candidate least favorable noise law.

A certificate is a quadratic ``Q(y) = alpha + beta y + gamma y**2`` with
``gamma >= 0`` that dominates the penalty ``D(y)`` of the posterior mean
induced by the candidate.  Any such quadratic gives the lower bound
``sigma**2 - alpha - gamma * eps`` on the objective, whatever the candidate;
touching ``D`` on the candidate's support closes the gap.

Everything is done in centered coordinates for both laws.  Windows passed in
by callers are in the coordinates of the noise law as given.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .conditional import PosteriorMap, dual_penalty, objective_phi, posterior_mean
from .distributions import GridPmf, center, default_noise_window, lattice, moments

FEAS_TOL = 1e-8
CS_TOL = 1e-8


class InfeasibleCertificate(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DualCertificate:
    alpha: float
    beta: float
    gamma: float
    lam: PosteriorMap
    epsilon: float
    slack_z: float
    second_moment: float
    ys: np.ndarray
    penalty: np.ndarray
    quadratic: np.ndarray
    margins: np.ndarray
    tail_margin: float
    g_shift: float
    fit_support: tuple[float, ...]

    def q(self, y: np.ndarray | float) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self.alpha + self.beta * y + self.gamma * y * y

    @property
    def worst_margin(self) -> float:
        return min(float(self.margins.min()), self.tail_margin)

    @property
    def dual_value(self) -> float:
        """``sigma**2 - alpha - gamma eps`` as written, before any lifting."""
        return self.second_moment - self.alpha - self.gamma * self.epsilon


@dataclass
class VerificationReport:
    alpha: float
    beta: float
    gamma: float
    worst_margin: float
    tail_margin: float
    cs_residual: float
    gamma_z_residual: float
    slack_z: float
    primal_value: float
    dual_bound: float | None
    gap: float | None
    primal_feasible: bool
    passed: bool
    feas_tol: float
    cs_tol: float
    audit_window: tuple[float, float]
    note: str = "dual feasibility audited on lattice points only"

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "worst_margin": self.worst_margin,
            "tail_margin": self.tail_margin,
            "cs_residual": self.cs_residual,
            "gamma_z_residual": self.gamma_z_residual,
            "slack_z": self.slack_z,
            "primal_value": self.primal_value,
            "dual_bound": self.dual_bound,
            "gap": self.gap,
            "primal_feasible": self.primal_feasible,
            "pass": self.passed,
            "feas_tol": self.feas_tol,
            "cs_tol": self.cs_tol,
            "audit_window": list(self.audit_window),
            "note": self.note,
        }


def _ray_min(alpha: float, beta: float, gamma: float, start: float, direction: int) -> float:
    """Infimum of the quadratic over the ray from ``start`` in ``direction``."""
    if gamma > 0:
        vertex = -beta / (2 * gamma)
        y = max(start, vertex) if direction > 0 else min(start, vertex)
        return alpha + beta * y + gamma * y * y
    slope = beta * direction
    if slope < 0:
        return -math.inf
    return alpha + beta * start


def _audit_lattice(f: GridPmf, g: GridPmf, window: tuple[float, float]) -> tuple[np.ndarray, float, float]:
    """Lattice points to audit, widened to cover every y where ``D`` can vary.

    Beyond ``[left, right]`` every ``x + y`` falls off the convolution grid, so
    ``D`` is constant there and the tails can be checked in closed form.
    """
    span = f.points[-1] - f.points[0]
    left = g.points[0] - span - f.step
    right = g.points[-1] + span + f.step
    lo = min(window[0], left)
    hi = max(window[1], right)
    return lattice(lo, hi, g.step, g.origin % g.step), lo, hi


def _margins(f: GridPmf, lam: PosteriorMap, ys: np.ndarray, alpha: float, beta: float, gamma: float, threads: int = 1):
    d = dual_penalty(f, lam, ys, threads=threads)
    q = alpha + beta * ys + gamma * ys * ys
    step = f.step
    d_left = float(dual_penalty(f, lam, ys[0] - step)[0])
    d_right = float(dual_penalty(f, lam, ys[-1] + step)[0])
    tail = min(
        _ray_min(alpha, beta, gamma, ys[0] - step, -1) - d_left,
        _ray_min(alpha, beta, gamma, ys[-1] + step, +1) - d_right,
    )
    return d, q, q - d, tail


def _two_atom_fit(ys_fit: np.ndarray, d_fit: np.ndarray, ys: np.ndarray, d: np.ndarray) -> tuple[float, float, float]:
    """Quadratic through two support points with the smallest feasible curvature.

    ``Q = L + A (y - y1)(y - y2)`` with ``L`` the chord; the dual value does not
    depend on ``A`` when the variance binds, so take the least ``A >= 0`` that
    keeps ``Q >= D`` on the audit points.
    """
    y1, y2 = ys_fit
    slope = (d_fit[1] - d_fit[0]) / (y2 - y1)
    chord = d_fit[0] + slope * (ys - y1)
    prod = (ys - y1) * (ys - y2)
    outside = prod > 0
    need = np.where(outside, (d - chord) / np.where(outside, prod, 1.0), -np.inf)
    a = max(0.0, float(need.max()) if need.size else 0.0)
    alpha = d_fit[0] - slope * y1 + a * y1 * y2
    beta = slope - a * (y1 + y2)
    return float(alpha), float(beta), a


def _linear_posterior_fit(f: GridPmf, lam: PosteriorMap, rtol: float = 1e-12) -> tuple[float, float, float] | None:
    """For ``lam(s) = b s`` on every mass point, ``D(y) = (1-b)^2 sigma^2 + b^2 y^2`` there.

    Returns that quadratic, or None when the posterior mean is not linear
    through the origin on the mass points (``f`` is centered).
    """
    s = lam.origin + lam.step * np.arange(lam.values.size)
    s, v = s[lam.mass_flags], lam.values[lam.mass_flags]
    if s.size < 2:
        return None
    b = float(np.dot(s, v) / np.dot(s, s))
    scale = max(1.0, float(np.max(np.abs(v))))
    if np.max(np.abs(v - b * s)) > rtol * scale:
        return None
    sigma2 = moments(f).second_moment
    return (1.0 - b) ** 2 * sigma2, 0.0, b * b


def _dominates(f: GridPmf, lam: PosteriorMap, ys: np.ndarray, coeffs: tuple[float, float, float], threads: int) -> bool:
    _, _, margins, tail = _margins(f, lam, ys, *coeffs, threads)
    return min(float(margins.min()), tail) >= -1e-12


def fit_certificate(
    f: GridPmf,
    g_star: GridPmf,
    epsilon: float,
    audit_window: tuple[float, float] | None = None,
    support_tol: float = 1e-8,
    cs_tol: float = CS_TOL,
    threads: int = 1,
) -> DualCertificate:
    """Fit ``(alpha, beta, gamma)`` so that ``Q = D`` on the support of ``g_star``.

    Three atoms under a binding variance bound are fitted exactly, more by
    least squares.  A slack variance bound forces ``gamma = 0``; a negative
    fitted ``gamma`` is refitted without the quadratic term.  Two atoms under a
    binding bound leave the curvature free, and the least feasible one is used.
    When the posterior mean is linear, ``lam(s) = b s``, the exact quadratic
    ``(1-b)^2 sigma^2 + b^2 y^2`` is preferred whenever it dominates ``D``.
    The posterior mean is always the one induced by ``g_star``.
    """
    fc = center(f)
    gc = center(g_star)
    g_shift = gc.origin - g_star.origin
    if audit_window is None:
        lo, hi = default_noise_window(fc, epsilon)
        pad = 0.25 * (hi - lo)
        audit_window = (lo - pad - g_shift, hi + pad - g_shift)
    window = (audit_window[0] + g_shift, audit_window[1] + g_shift)

    lam = posterior_mean(fc, gc)
    m = moments(gc)
    slack = epsilon - m.second_moment
    pts = gc.points
    active = gc.weights > support_tol
    ys_fit = pts[active]
    if ys_fit.size < 1:
        raise ValueError("candidate has no atoms above support_tol")
    d_fit = dual_penalty(fc, lam, ys_fit, threads=threads)
    ys, _, _ = _audit_lattice(fc, gc, window)
    binding = slack <= cs_tol

    affine = _linear_posterior_fit(fc, lam) if binding else None
    if affine is not None and _dominates(fc, lam, ys, affine, threads):
        alpha, beta, gamma = affine
    elif binding and ys_fit.size == 2:
        d_all = dual_penalty(fc, lam, ys, threads=threads)
        alpha, beta, gamma = _two_atom_fit(ys_fit, d_fit, ys, d_all)
    else:
        alpha = beta = gamma = 0.0
        if binding:
            basis = np.vstack([np.ones_like(ys_fit), ys_fit, ys_fit**2]).T
            alpha, beta, gamma = np.linalg.lstsq(basis, d_fit, rcond=None)[0]
        if not binding or gamma < 0:
            basis = np.vstack([np.ones_like(ys_fit), ys_fit]).T
            alpha, beta = np.linalg.lstsq(basis, d_fit, rcond=None)[0]
            gamma = 0.0
    alpha, beta, gamma = float(alpha), float(beta), float(gamma)

    d, q, margins, tail = _margins(fc, lam, ys, alpha, beta, gamma, threads)
    return DualCertificate(
        alpha=alpha,
        beta=beta,
        gamma=gamma,
        lam=lam,
        epsilon=epsilon,
        slack_z=slack,
        second_moment=moments(fc).second_moment,
        ys=ys - g_shift,
        penalty=d,
        quadratic=q,
        margins=margins,
        tail_margin=tail,
        g_shift=g_shift,
        fit_support=tuple(float(v) for v in ys_fit - g_shift),
    )


def certificate_from_quadratic(
    f: GridPmf,
    g_star: GridPmf,
    epsilon: float,
    alpha: float,
    beta: float,
    gamma: float,
    audit_window: tuple[float, float],
    threads: int = 1,
) -> DualCertificate:
    """Wrap a given quadratic (in centered noise coordinates) as a certificate.

    The posterior mean is the one induced by ``g_star``; the audit window is in
    the coordinates of ``g_star`` as given.
    """
    fc = center(f)
    gc = center(g_star)
    g_shift = gc.origin - g_star.origin
    window = (audit_window[0] + g_shift, audit_window[1] + g_shift)
    lam = posterior_mean(fc, gc)
    ys, _, _ = _audit_lattice(fc, gc, window)
    d, q, margins, tail = _margins(fc, lam, ys, alpha, beta, gamma, threads)
    active = gc.points[gc.weights > 0]
    return DualCertificate(
        alpha=float(alpha),
        beta=float(beta),
        gamma=float(gamma),
        lam=lam,
        epsilon=epsilon,
        slack_z=epsilon - moments(gc).second_moment,
        second_moment=moments(fc).second_moment,
        ys=ys - g_shift,
        penalty=d,
        quadratic=q,
        margins=margins,
        tail_margin=tail,
        g_shift=g_shift,
        fit_support=tuple(float(v) for v in active - g_shift),
    )


def _with_window(cert: DualCertificate, f: GridPmf, g_star: GridPmf, window: tuple[float, float]) -> DualCertificate:
    fc, gc = center(f), center(g_star)
    shifted = (window[0] + cert.g_shift, window[1] + cert.g_shift)
    ys, _, _ = _audit_lattice(fc, gc, shifted)
    d, q, margins, tail = _margins(fc, cert.lam, ys, cert.alpha, cert.beta, cert.gamma)
    return DualCertificate(
        cert.alpha, cert.beta, cert.gamma, cert.lam, cert.epsilon, cert.slack_z,
        cert.second_moment, ys - cert.g_shift, d, q, margins, tail, cert.g_shift, cert.fit_support,
    )


def _g_on_audit(cert: DualCertificate, g_star: GridPmf) -> np.ndarray:
    idx = np.rint((g_star.points - cert.ys[0]) / g_star.step).astype(np.int64)
    out = np.zeros(cert.ys.size)
    inside = (idx >= 0) & (idx < cert.ys.size)
    if not inside[g_star.weights > 0].all():
        raise ValueError("audit window must contain the support of g_star")
    np.add.at(out, idx[inside], g_star.weights[inside])
    return out


def verify_certificate(
    cert: DualCertificate,
    f: GridPmf,
    g_star: GridPmf,
    audit_window: tuple[float, float] | None = None,
    feas_tol: float = FEAS_TOL,
    cs_tol: float = CS_TOL,
) -> VerificationReport:
    """Check dual feasibility and both slackness conditions; never raises on failure."""
    if audit_window is not None:
        cert = _with_window(cert, f, g_star, audit_window)
    g_on = _g_on_audit(cert, g_star)
    cs_residual = math.fsum(g_on * np.abs(cert.margins))
    gz = cert.gamma * abs(cert.slack_z)
    var_post = objective_phi(center(f), center(g_star)).var_posterior
    worst = cert.worst_margin
    feasible_dual = cert.gamma >= 0 and worst >= -feas_tol
    m = moments(g_star)
    primal_ok = m.variance <= cert.epsilon + 1e-10
    bound = gap = None
    if feasible_dual:
        bound = _lifted_bound(cert)
        gap = var_post - bound
    passed = feasible_dual and primal_ok and cs_residual <= cs_tol and gz <= cs_tol
    return VerificationReport(
        alpha=cert.alpha,
        beta=cert.beta,
        gamma=cert.gamma,
        worst_margin=worst,
        tail_margin=cert.tail_margin,
        cs_residual=cs_residual,
        gamma_z_residual=gz,
        slack_z=cert.slack_z,
        primal_value=var_post,
        dual_bound=bound,
        gap=gap,
        primal_feasible=primal_ok,
        passed=passed,
        feas_tol=feas_tol,
        cs_tol=cs_tol,
        audit_window=(float(cert.ys[0]), float(cert.ys[-1])),
    )


def _lifted_bound(cert: DualCertificate) -> float:
    # raising alpha by the worst violation makes Q dominate D exactly on the lattice
    lift = max(0.0, -cert.worst_margin)
    return cert.dual_value - lift


def duality_gap(f: GridPmf, g_star: GridPmf, cert: DualCertificate, epsilon: float, feas_tol: float = FEAS_TOL) -> float:
    """Primal value of ``g_star`` minus the lower bound the certificate proves."""
    if not math.isclose(epsilon, cert.epsilon, rel_tol=0, abs_tol=1e-15 * max(1.0, epsilon)):
        raise ValueError("certificate was fitted for a different variance bound")
    if cert.gamma < 0 or cert.worst_margin < -feas_tol:
        raise InfeasibleCertificate(
            f"certificate is not dual feasible (worst margin {cert.worst_margin:.3g})"
        )
    var_post = objective_phi(center(f), center(g_star)).var_posterior
    return var_post - _lifted_bound(cert)


def certify(
    f: GridPmf,
    g: GridPmf,
    epsilon: float,
    audit_window: tuple[float, float] | None = None,
    feas_tol: float = FEAS_TOL,
    cs_tol: float = CS_TOL,
    support_tol: float = 1e-8,
) -> tuple[DualCertificate, VerificationReport]:
    cert = fit_certificate(f, g, epsilon, audit_window, support_tol=support_tol, cs_tol=cs_tol)
    return cert, verify_certificate(cert, f, g, feas_tol=feas_tol, cs_tol=cs_tol)
