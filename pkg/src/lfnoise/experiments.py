"""Scripted studies: monotonicity of V(lambda), the two-coin counterexample, figure data."""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from pathlib import Path
from typing import Callable

from . import io
from .closedform import critical_point
from .conditional import objective_phi
from .distributions import (
    GridPmf,
    bernoulli,
    center,
    moments,
    pmf_on_lattice,
    same_step,
    scale,
    squared_sum_two_uniforms,
    sum_two_uniforms,
    uniform_n,
)
from .solver import SolveReport, SolverConfig, solve

DEFAULT_UNIFORM_SIZE = 11


@dataclass
class MonotonicityCurve:
    lambdas: list[float]
    values: list[float]
    x_label: str = ""
    y_label: str = ""

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.lambdas, self.lambdas[1:])):
            raise ValueError("lambdas must be strictly increasing")
        if len(self.values) != len(self.lambdas):
            raise ValueError("one value per lambda")

    def decrements(self) -> list[float]:
        return [a - b for a, b in zip(self.values, self.values[1:])]

    def rows(self) -> list[tuple[float, float]]:
        return list(zip(self.lambdas, self.values))


def _scaled_noise(g: GridPmf, lam: float, step: float) -> GridPmf:
    """Law of ``lam * Y`` on the grid of step ``step``; off-grid results are rejected."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if float(lam).is_integer() and same_step(g.step, step):
        return scale(g, int(lam))
    # a non-integer factor is fine when the stretched grid refines onto ``step``
    stretched = GridPmf(lam * g.origin, lam * g.step, g.weights, g.padded)
    ratio = stretched.step / step
    if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
        raise ValueError(f"lambda {lam!r} puts the noise off the grid of step {step!r}")
    k0 = stretched.origin / step
    if abs(k0 - round(k0)) > 1e-9 * max(1.0, abs(k0)):
        raise ValueError(f"lambda {lam!r} puts the noise off the grid of step {step!r}")
    return pmf_on_lattice(stretched, step)


def noise_step_for(lambdas: list[float], unit: float = 1.0) -> float:
    """Noise step ``unit / lcm(lambdas)`` for integer ``lambdas``.

    Then every ``lambda * step`` divides ``unit``, so ``lambda Y`` still blurs
    neighbouring values of an X living on the ``unit`` grid; with other steps
    the sums ``X + lambda Y`` can separate the values of X exactly.
    """
    ks = [int(v) for v in lambdas]
    if any(k != v or k < 1 for k, v in zip(ks, lambdas)):
        raise ValueError("lambdas must be positive integers")
    return unit / math.lcm(*ks)


def monotonicity_curve(
    f: GridPmf, g: GridPmf, lambdas: list[float], x_label: str = "", y_label: str = ""
) -> MonotonicityCurve:
    """``V(lambda) = var E[X | X + lambda Y]`` for each ``lambda``.

    X is re-expressed on the grid of Y (whose step must divide that of X),
    and integer ``lambda`` stretches Y exactly on that grid.
    """
    step = g.step
    if not same_step(f.step, step):
        try:
            f = pmf_on_lattice(f, step)
        except ValueError:
            raise ValueError(f"the step of Y ({step!r}) must divide the step of X ({f.step!r})") from None
    values = [objective_phi(f, _scaled_noise(g, lam, step)).var_posterior for lam in lambdas]
    return MonotonicityCurve([float(v) for v in lambdas], values, x_label, y_label)


def coin_counterexample() -> tuple[Fraction, Fraction]:
    """``V(1)`` and ``V(2)`` for independent fair coins X, Y in {0, 1}, by enumeration.

    With ``X + 2Y`` every outcome reveals X, so the noise made larger helps less.
    """

    def var_posterior(lam: int) -> Fraction:
        outcomes = [(x, y, Fraction(1, 4)) for x, y in product((0, 1), repeat=2)]
        by_sum: dict[int, list[tuple[int, Fraction]]] = {}
        for x, y, pr in outcomes:
            by_sum.setdefault(x + lam * y, []).append((x, pr))
        second = Fraction(0)
        for items in by_sum.values():
            mass = sum(pr for _, pr in items)
            post = sum(x * pr for x, pr in items) / mass
            second += mass * post * post
        return second - Fraction(1, 2) ** 2

    return var_posterior(1), var_posterior(2)


# ---------------------------------------------------------------------------
# figure runs


@dataclass(frozen=True)
class FigureSpec:
    id: str
    build: Callable[[], GridPmf]
    epsilon: Callable[[GridPmf], float]
    description: str = ""


def _binomial_eps(frac: float) -> Callable[[GridPmf], float]:
    return lambda f: frac * critical_point(0.6)[1]


def _caption_eps(kind: str) -> Callable[[GridPmf], float]:
    if kind == "low":
        return lambda f: 2.0 * moments(f).variance / math.pi
    return lambda f: math.pi * moments(f).variance / 2.0


def _uniform_family(builder: Callable[[int], GridPmf], n: int) -> Callable[[], GridPmf]:
    return lambda: center(builder(n))


def figure_specs(n: int = DEFAULT_UNIFORM_SIZE) -> dict[str, FigureSpec]:
    specs = {
        "bin_low": FigureSpec("bin_low", lambda: bernoulli(0.6), _binomial_eps(0.5), "B(1,0.6), eps = eps*/2"),
        "bin_crit": FigureSpec("bin_crit", lambda: bernoulli(0.6), _binomial_eps(1.0), "B(1,0.6), eps = eps*"),
        "bin_high": FigureSpec("bin_high", lambda: bernoulli(0.6), _binomial_eps(2.0), "B(1,0.6), eps = 2 eps*"),
    }
    families = {"unif": uniform_n, "sum2": sum_two_uniforms, "sq": squared_sum_two_uniforms}
    for name, builder in families.items():
        for kind in ("low", "high"):
            key = f"{name}_{kind}"
            caption = "2 var X / pi" if kind == "low" else "pi var X / 2"
            specs[key] = FigureSpec(key, _uniform_family(builder, n), _caption_eps(kind), f"{name}({n}), eps = {caption}")
    return specs


FIGURE_IDS = tuple(figure_specs())


@dataclass
class FigureRun:
    id: str
    x: GridPmf
    epsilon: float
    report: SolveReport
    files: dict[str, Path] = field(default_factory=dict)


def run_figure(fig_id: str, n: int = DEFAULT_UNIFORM_SIZE, threads: int = 1, **solver_options) -> FigureRun:
    specs = figure_specs(n)
    if fig_id not in specs:
        raise ValueError(f"unknown figure id {fig_id!r}; choose from {sorted(specs)}")
    spec = specs[fig_id]
    f = spec.build()
    eps = spec.epsilon(f)
    report = solve(f, SolverConfig(eps, threads=threads, **solver_options))
    return FigureRun(fig_id, f, eps, report)


def write_figure(run: FigureRun, out_dir: str | os.PathLike) -> dict[str, Path]:
    target = Path(out_dir) / run.id
    target.mkdir(parents=True, exist_ok=True)
    files = {
        "x": target / "x.csv",
        "g_star": target / "g_star.csv",
        "diagnostic": target / "diagnostic.csv",
        "report": target / "report.json",
    }
    io.write_pmf_csv(run.x, files["x"])
    io.write_pmf_csv(run.report.g_star, files["g_star"])
    io.write_diagnostic(run.report.certificate, run.report.g_star, files["diagnostic"])
    payload = io.report_to_dict(run.report)
    payload["figure"] = run.id
    io.write_json(payload, files["report"])
    run.files = files
    return files


def reproduce_figure(fig_id: str, out_dir: str | os.PathLike, n: int = DEFAULT_UNIFORM_SIZE, threads: int = 1) -> FigureRun:
    """Solve, certify and write ``<id>/x.csv, g_star.csv, diagnostic.csv, report.json``."""
    run = run_figure(fig_id, n=n, threads=threads)
    write_figure(run, out_dir)
    return run


def central_hole(g: GridPmf, tol: float = 0.0) -> bool:
    """True when the atom nearest the mean weighs less than both neighbours."""
    pts, w = g.points, g.weights
    i = int(abs(pts - moments(g).mean).argmin())
    if i == 0 or i == pts.size - 1:
        return False
    return bool(w[i] + tol < w[i - 1] and w[i] + tol < w[i + 1])
