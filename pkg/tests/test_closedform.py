import math

import numpy as np
import pytest
from scipy.optimize import brentq

from lfnoise.certificate import verify_certificate
from lfnoise.closedform import (
    BINOMIAL_AUDIT_WINDOW,
    Regime,
    binomial_small_eps,
    critical_point,
    iid_solution,
    levy_solution_poisson,
    minimal_slack_coefficient,
    two_point_second_moment,
)
from lfnoise.conditional import objective_phi
from lfnoise.distributions import bernoulli, center, moments, poisson_centered, uniform_n
from lfnoise.solver import SolverConfig, solve

PS = [0.5, 0.55, 0.6, 0.75, 0.9]
FRACS = [0.25, 0.5, 1.0]


def brute_two_point(p, eps, mesh=1e-6):
    """Least second moment over B(1, p') with p'(1-p') <= eps, on a 1e-6 mesh.

    The feasible set is [0, a] u [b, 1] with a, b the roots of p'(1-p') = eps;
    each interval is meshed from both of its ends.
    """
    if eps >= 0.25:
        grids = [np.arange(0.0, 1.0 + mesh / 2, mesh)]
    else:
        a = brentq(lambda t: t * (1 - t) - eps, 0.0, 0.5, xtol=1e-15)
        b = brentq(lambda t: t * (1 - t) - eps, 0.5, 1.0, xtol=1e-15)
        grids = [np.append(np.arange(0.0, a, mesh), a), np.append(np.arange(b, 1.0, mesh), 1.0)]
    return min(float(np.min(two_point_second_moment(p, gr))) for gr in grids)


def test_symmetric_coin_example():
    sol = binomial_small_eps(0.5, 0.25)
    assert (sol.p_star, sol.eps_star, sol.p_prime) == pytest.approx((0.5, 0.25, 0.5), abs=1e-15)
    assert sol.objective_second_moment == pytest.approx(3 / 8, abs=1e-15)
    assert sol.posterior_variance == pytest.approx(1 / 8, abs=1e-15)
    assert sol.regime is Regime.CONSTRAINED


def test_critical_point_formula():
    p = 0.6
    p_star, eps_star = critical_point(p)
    assert p_star == pytest.approx(math.sqrt(0.6) / (math.sqrt(0.6) + math.sqrt(0.4)), abs=1e-15)
    assert eps_star == pytest.approx(0.25 * (1 - (2 * p_star - 1) ** 2), abs=1e-15)
    # the unconstrained minimizer of the two-point objective sits at p*
    grid = np.arange(0.0, 1.0, 1e-6)
    assert grid[np.argmin(two_point_second_moment(p, grid))] == pytest.approx(p_star, abs=2e-6)


@pytest.mark.parametrize("p", PS)
@pytest.mark.parametrize("frac", FRACS)
def test_matches_brute_force_mesh(p, frac):
    eps = frac * critical_point(p)[1]
    sol = binomial_small_eps(p, eps)
    assert abs(sol.objective_second_moment - brute_two_point(p, eps)) <= 1e-9


@pytest.mark.parametrize("p", PS)
@pytest.mark.parametrize("frac", FRACS)
def test_certificate_passes_on_integer_window(p, frac):
    eps = frac * critical_point(p)[1]
    sol = binomial_small_eps(p, eps)
    cert = sol.certificate()
    rep = verify_certificate(cert, sol.x_law(), sol.noise_law(original=False), feas_tol=1e-10)
    assert rep.passed, rep.to_dict()
    assert rep.worst_margin >= -1e-10
    assert rep.gap == pytest.approx(0.0, abs=1e-9)
    assert sol.A >= 0


@pytest.mark.parametrize("p", [0.55, 0.6, 0.75, 0.9])
def test_quadratic_touches_penalty_at_zero_and_one(p):
    sol = binomial_small_eps(p, 0.5 * critical_point(p)[1])
    q = 1 - p
    assert sol.quadratic(0.0) == pytest.approx(q * sol.B, abs=1e-15)
    assert sol.quadratic(1.0) == pytest.approx(p * sol.B1, abs=1e-15)


def test_minimal_slack_coefficient_is_minimal():
    p = 0.6
    sol = binomial_small_eps(p, 0.5 * critical_point(p)[1])
    a = minimal_slack_coefficient(p, sol.p_prime, sol.B, sol.B1, BINOMIAL_AUDIT_WINDOW)
    assert a == sol.A and a > 0
    smaller = type(sol)(**{**sol.__dict__, "A": a * (1 - 1e-6)})
    rep = verify_certificate(smaller.certificate(), sol.x_law(), sol.noise_law(original=False), feas_tol=0.0)
    assert not rep.passed


@pytest.mark.parametrize("p", PS)
def test_constraint_stops_binding_at_critical_bound(p):
    p_star, eps_star = critical_point(p)
    sol = binomial_small_eps(p, eps_star)
    assert abs(sol.p_prime - p_star) <= 1e-9


def test_small_p_is_mirrored():
    a = binomial_small_eps(0.3, 0.1)
    b = binomial_small_eps(0.7, 0.1)
    assert a.swapped and not b.swapped
    assert a.posterior_variance == pytest.approx(b.posterior_variance, abs=1e-15)
    g = a.noise_law()
    assert g.weights[1] == pytest.approx(1 - b.p_prime, abs=1e-15)
    direct = objective_phi(bernoulli(0.3), g).var_posterior
    assert direct == pytest.approx(a.posterior_variance, abs=1e-12)


def test_above_critical_bound_warns_and_gives_no_formula():
    p = 0.6
    _, eps_star = critical_point(p)
    with pytest.warns(RuntimeWarning, match="numerical solver"):
        sol = binomial_small_eps(p, 2 * eps_star)
    assert sol.regime is Regime.UNCONSTRAINED_WARNING
    assert sol.eps_star == pytest.approx(eps_star)
    assert math.isnan(sol.B) and math.isnan(sol.A)
    with pytest.raises(ValueError):
        sol.certificate()
    # the solver does better than the best two-point law there
    rep = solve(center(bernoulli(p)), SolverConfig(2 * eps_star))
    assert rep.primal_value < sol.posterior_variance - 1e-6


@pytest.mark.parametrize("bad", [(0.0, 0.1), (1.0, 0.1), (0.6, 0.0), (0.6, -1.0)])
def test_invalid_arguments(bad):
    with pytest.raises(ValueError):
        binomial_small_eps(*bad)


@pytest.mark.parametrize("p", [0.55, 0.9])
@pytest.mark.parametrize("frac", [0.25, 1.0])
def test_solver_agrees_on_the_closed_form_lattice(p, frac):
    eps = frac * critical_point(p)[1]
    sol = binomial_small_eps(p, eps)
    rep = solve(center(bernoulli(p)), SolverConfig(eps, offset=-sol.p_prime % 1.0))
    assert rep.primal_value == pytest.approx(sol.posterior_variance, abs=1e-6)


def test_to_dict_marks_closed_form():
    d = binomial_small_eps(0.6, 0.1).to_dict()
    assert d["closed_form"] is True and d["regime"] == "constrained"


@pytest.mark.parametrize("f", [center(bernoulli(0.5)), center(uniform_n(3)), center(uniform_n(6))])
def test_iid_solution(f):
    g, value = iid_solution(f)
    assert g == f
    assert value == pytest.approx(moments(f).variance / 2, abs=1e-15)
    assert objective_phi(f, f).var_posterior == pytest.approx(value, abs=1e-10)


def test_iid_uniform_three_points():
    assert iid_solution(center(uniform_n(3)))[1] == pytest.approx(1 / 3, abs=1e-15)


def test_poisson_solution_values():
    g, value, b = levy_solution_poisson(2.0, 1.0)
    assert (value, b) == pytest.approx((4 / 3, 2 / 3), abs=1e-15)
    assert moments(g).variance == pytest.approx(1.0, abs=1e-9)
    direct = objective_phi(poisson_centered(2.0, 1e-12), g).var_posterior
    assert direct == pytest.approx(4 / 3, abs=2e-3)
    assert levy_solution_poisson(3.0, 1e-9)[1] == pytest.approx(3.0, abs=1e-8)
    assert levy_solution_poisson(2.5, 2.5)[1] == pytest.approx(1.25, abs=1e-15)
    with pytest.raises(ValueError):
        levy_solution_poisson(0.0, 1.0)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_poisson_noise_with_integer_variance(m):
    t = 2.0
    g, value, _ = levy_solution_poisson(t, float(m))
    assert value == pytest.approx(t * t / (t + m), abs=1e-15)
    direct = objective_phi(poisson_centered(t, 1e-12), g).var_posterior
    assert direct == pytest.approx(value, abs=2e-3)
