"""Exact reference solutions.

* Bernoulli X with a small variance bound: the optimal noise is a two-point
  law on {0, 1}, with an explicit dual quadratic proving optimality.
* ``eps = var X``: the noise law equal to ``f`` itself, with ``E[X|X+Y] = (X+Y)/2``.
* Centered Poisson X with variance ``t``: centered Poisson noise with variance
  ``eps``, for which the posterior mean is linear in ``X + Y``.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .certificate import DualCertificate, certificate_from_quadratic
from .distributions import GridPmf, bernoulli, moments, poisson_centered

BINOMIAL_AUDIT_WINDOW = (-10.0, 12.0)


class Regime(str, enum.Enum):
    CONSTRAINED = "constrained"
    UNCONSTRAINED_WARNING = "unconstrained_warning"


def critical_point(p: float) -> tuple[float, float]:
    """Unconstrained minimizer ``p*`` of the two-point objective and ``eps* = p*(1-p*)``."""
    q = 1.0 - p
    p_star = math.sqrt(p) / (math.sqrt(p) + math.sqrt(q))
    return p_star, p_star * (1.0 - p_star)


def two_point_second_moment(p: float, p_prime: np.ndarray | float) -> np.ndarray | float:
    """``E[E[X|X+Y]^2]`` for X ~ B(1,p) and Y ~ B(1,p') independent."""
    q = 1.0 - p
    q_prime = 1.0 - np.asarray(p_prime, dtype=float)
    p_prime = np.asarray(p_prime, dtype=float)
    out = p * p_prime + (p * q_prime) ** 2 / (p * q_prime + q * p_prime)
    return float(out) if out.ndim == 0 else out


def _lam_raw(p: float, p_prime: float, s: np.ndarray) -> np.ndarray:
    """Posterior mean on sums ``s`` in raw {0,1} coordinates, 0 below and 1 above."""
    q, q_prime = 1.0 - p, 1.0 - p_prime
    mid = p * q_prime / (p * q_prime + q * p_prime)
    return np.where(s <= 0, 0.0, np.where(s >= 2, 1.0, np.where(s == 1, mid, 0.0)))


def _raw_penalty(p: float, p_prime: float, y: np.ndarray) -> np.ndarray:
    q = 1.0 - p
    return q * _lam_raw(p, p_prime, y) ** 2 + p * (1.0 - _lam_raw(p, p_prime, y + 1)) ** 2


@dataclass(frozen=True)
class BinomialSolution:
    """Optimal two-point noise for X ~ B(1,p), stated for ``p >= 1/2``.

    When the input had ``p < 1/2`` the problem was mirrored (``X -> 1 - X``),
    which leaves the posterior variance unchanged; ``swapped`` records this and
    ``noise_law`` mirrors the answer back.
    """

    p: float
    q: float
    epsilon: float
    theta: float
    p_prime: float
    p_star: float
    eps_star: float
    objective_second_moment: float
    posterior_variance: float
    B: float
    B1: float
    A: float
    regime: Regime
    swapped: bool = False
    message: str = ""

    def x_law(self) -> GridPmf:
        """Law of X in the (possibly mirrored) orientation the fields refer to."""
        return bernoulli(self.p)

    def noise_law(self, original: bool = True) -> GridPmf:
        if original and self.swapped:
            return bernoulli(1.0 - self.p_prime)
        return bernoulli(self.p_prime)

    def quadratic(self, x: np.ndarray | float) -> np.ndarray:
        """Dual quadratic in raw coordinates: ``qB`` at 0, ``p B1`` at 1, curvature ``A``."""
        x = np.asarray(x, dtype=float)
        return _quadratic(self.p, self.B, self.B1, self.A, x)

    def centered_coefficients(self) -> tuple[float, float, float]:
        """``(alpha, beta, gamma)`` of ``u -> Q(u + p')`` for centered noise."""
        q0 = self.q * self.B
        lin = self.p * self.B1 - q0 - self.A
        gamma = self.A
        alpha = q0 + lin * self.p_prime + gamma * self.p_prime**2
        beta = lin + 2.0 * gamma * self.p_prime
        return alpha, beta, gamma

    def certificate(self, audit_window: tuple[float, float] = BINOMIAL_AUDIT_WINDOW) -> DualCertificate:
        if self.regime is not Regime.CONSTRAINED:
            raise ValueError("no closed-form certificate above the critical variance bound")
        alpha, beta, gamma = self.centered_coefficients()
        return certificate_from_quadratic(
            self.x_law(), self.noise_law(original=False), self.epsilon, alpha, beta, gamma, audit_window
        )

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "q": self.q,
            "epsilon": self.epsilon,
            "theta": self.theta,
            "p_prime": self.p_prime,
            "p_star": self.p_star,
            "eps_star": self.eps_star,
            "objective_second_moment": self.objective_second_moment,
            "posterior_variance": self.posterior_variance,
            "B": self.B,
            "B1": self.B1,
            "A": self.A,
            "regime": self.regime.value,
            "swapped": self.swapped,
            "message": self.message,
            "closed_form": True,
        }


def _quadratic(p: float, B: float, B1: float, A: float, x: np.ndarray) -> np.ndarray:
    q = 1.0 - p
    return q * B * (1.0 - x) + p * B1 * x + A * x * (x - 1.0)


def minimal_slack_coefficient(p: float, p_prime: float, B: float, B1: float, window: tuple[float, float]) -> float:
    """Least ``A >= 0`` making the quadratic dominate the penalty at every integer in ``window``.

    The quadratic equals the penalty at 0 and 1 for every ``A``, and
    ``x(x-1) > 0`` at all other integers, so the bound is a maximum of ratios.
    """
    ys = np.arange(math.ceil(window[0]), math.floor(window[1]) + 1, dtype=float)
    ys = ys[(ys != 0) & (ys != 1)]
    base = _quadratic(p, B, B1, 0.0, ys)
    need = (_raw_penalty(p, p_prime, ys) - base) / (ys * (ys - 1.0))
    return max(0.0, float(need.max())) if need.size else 0.0


def binomial_small_eps(
    p: float, epsilon: float, audit_window: tuple[float, float] = BINOMIAL_AUDIT_WINDOW
) -> BinomialSolution:
    """Closed-form optimum for X ~ B(1,p) when the variance bound is at most ``eps*``.

    Above ``eps*`` the optimum has more than two atoms and there is no formula;
    the result then carries the boundary data (the best two-point law ``p*``,
    which is feasible but not optimal), regime ``unconstrained_warning`` and a
    warning pointing to the numerical solver.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    if not epsilon > 0.0:
        raise ValueError("variance_bound must be positive")
    swapped = p < 0.5
    if swapped:
        p = 1.0 - p
    q = 1.0 - p
    p_star, eps_star = critical_point(p)
    if epsilon <= eps_star:
        theta = math.sqrt(max(0.0, 1.0 - 4.0 * epsilon))
        p_prime = 0.5 * (1.0 + theta)
        denom = (q * (1.0 + theta) + p * (1.0 - theta)) ** 2
        # penalty at 0 is q B and at 1 is p B1
        B = p * q * (1.0 + theta) ** 2 / denom
        B1 = p * q * (1.0 - theta) ** 2 / denom
        A = minimal_slack_coefficient(p, p_prime, B, B1, audit_window)
        regime, message = Regime.CONSTRAINED, ""
    else:
        theta = math.sqrt(1.0 - 4.0 * epsilon) if epsilon <= 0.25 else math.nan
        p_prime = p_star
        B = B1 = A = math.nan
        regime = Regime.UNCONSTRAINED_WARNING
        message = (
            f"epsilon {epsilon:.6g} exceeds eps* = {eps_star:.6g}: the optimal noise has more "
            "than two atoms; use the numerical solver"
        )
        warnings.warn(message, RuntimeWarning, stacklevel=2)
    second = two_point_second_moment(p, p_prime)
    return BinomialSolution(
        p=p,
        q=q,
        epsilon=epsilon,
        theta=theta,
        p_prime=p_prime,
        p_star=p_star,
        eps_star=eps_star,
        objective_second_moment=second,
        posterior_variance=second - p * p,
        B=B,
        B1=B1,
        A=A,
        regime=regime,
        swapped=swapped,
        message=message,
    )


def iid_solution(f: GridPmf) -> tuple[GridPmf, float]:
    """Noise equal in law to X when ``eps = var X``: objective ``var X / 2``."""
    return f, 0.5 * moments(f).variance


def levy_solution_poisson(t: float, epsilon: float, tail_tol: float = 1e-12) -> tuple[GridPmf, float, float]:
    """Centered Poisson X with variance ``t`` against noise of variance ``eps``.

    The optimal noise is centered Poisson with variance ``eps``; then
    ``E[X|X+Y] = b (X+Y)`` with ``b = t / (t + eps)`` and the objective is
    ``t^2 / (t + eps)``.  Returns ``(g, objective, b)``.
    """
    if not t > 0 or not epsilon > 0:
        raise ValueError("t and epsilon must be positive")
    b = t / (t + epsilon)
    return poisson_centered(epsilon, tail_tol), t * t / (t + epsilon), b
