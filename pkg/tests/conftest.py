import os

import numpy as np
from hypothesis import HealthCheck, settings

from lfnoise.distributions import moments

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def convex_oracle_value(f, y, eps):
    """``var E[X|X+Y]`` minimized over laws on ``y`` by a generic conic solver (cvxpy)."""
    import cvxpy as cp

    n, m = f.weights.size, y.size
    conv = np.zeros((n + m - 1, m))
    first = np.zeros((n + m - 1, m))
    for j in range(m):
        conv[j : j + n, j] = f.weights
        first[j : j + n, j] = f.weights * f.points
    g = cp.Variable(m, nonneg=True)
    mass, num = conv @ g, first @ g
    terms = [cp.quad_over_lin(num[s], mass[s]) for s in range(n + m - 1)]
    prob = cp.Problem(cp.Minimize(cp.sum(cp.hstack(terms))), [cp.sum(g) == 1, y @ g == 0, cp.square(y) @ g <= eps])
    prob.solve(solver=cp.CLARABEL)
    return prob.value - moments(f).mean ** 2
