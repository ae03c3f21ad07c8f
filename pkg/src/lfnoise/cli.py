"""Command-line front end.

Exit codes: 0 success, 1 input error, 2 solver did not converge (or the
duality gap exceeds the tolerance, or a certificate fails verification).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from pathlib import Path

from . import io
from .certificate import certify, verify_certificate
from .closedform import binomial_small_eps, critical_point
from .distributions import GridPmf, MomentSpec, center, gaussian_discretized, parse_builder
from .experiments import DEFAULT_UNIFORM_SIZE, FIGURE_IDS, monotonicity_curve, noise_step_for, reproduce_figure
from .solver import SolverConfig, solve

EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2
FW_GAP_TOL = 1e-9
GAP_TOL = 1e-6
ENV_TOL = "LFN_DEFAULT_TOL"

log = logging.getLogger("lfnoise")


class InputError(Exception):
    pass


def _default_tols() -> tuple[float, float]:
    raw = os.environ.get(ENV_TOL)
    if raw is None or not raw.strip():
        return FW_GAP_TOL, GAP_TOL
    try:
        tol = float(raw)
    except ValueError:
        raise InputError(f"{ENV_TOL}={raw!r} is not a number") from None
    if not tol > 0:
        raise InputError(f"{ENV_TOL} must be positive")
    return tol, tol


def _load_law(pmf: str | None, builder: str | None, what: str = "X") -> GridPmf:
    if pmf and builder:
        raise InputError(f"give either a PMF file or a builder for {what}, not both")
    if pmf:
        return io.read_pmf(pmf)
    if builder:
        try:
            return parse_builder(builder)
        except (TypeError, ValueError) as exc:
            raise InputError(f"bad builder spec {builder!r}: {exc}") from None
    raise InputError(f"no law given for {what}")


def _file_or_builder(value: str, what: str) -> GridPmf:
    if Path(value).exists():
        return io.read_pmf(value)
    return _load_law(None, value, what)


def _parse_window(text: str | None) -> tuple[float, float] | None:
    if text is None:
        return None
    lo, sep, hi = text.partition(":")
    try:
        if not sep:
            raise ValueError
        window = (float(lo), float(hi))
    except ValueError:
        raise InputError(f"--window expects Y_MIN:Y_MAX, got {text!r}") from None
    if not window[0] < 0 < window[1]:
        raise InputError("--window must satisfy Y_MIN < 0 < Y_MAX")
    return window


def _parse_lambdas(text: str) -> list[float]:
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            a, b = int(lo), int(hi)
        except ValueError:
            raise InputError(f"--lambdas range must be integers, got {text!r}") from None
        if a < 1 or b < a:
            raise InputError("--lambdas range must be 1 <= a <= b")
        return [float(v) for v in range(a, b + 1)]
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise InputError(f"--lambdas expects a..b or a comma list, got {text!r}") from None


def _epsilon(value: float) -> float:
    MomentSpec(value)
    return float(value)


def _out_dir(path: str | None) -> Path | None:
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands


def cmd_solve(args: argparse.Namespace) -> int:
    fw_tol, gap_tol = _default_tols()
    eps = _epsilon(args.epsilon)
    f = _load_law(args.pmf, args.builder)
    if args.center:
        f = center(f)
    config = SolverConfig(
        eps,
        window=_parse_window(args.window),
        offset=args.offset,
        max_iters=args.max_iters,
        fw_gap_tol=args.fw_gap_tol if args.fw_gap_tol is not None else fw_tol,
        threads=args.threads,
    )
    report = solve(f, config)
    payload = io.report_to_dict(report)
    out = _out_dir(args.out)
    if out is not None:
        io.write_json(payload, out / "report.json")
        io.write_pmf_csv(report.g_star, out / "g_star.csv")
        io.write_diagnostic(report.certificate, report.g_star, out / "diagnostic.csv")
        io.write_trace(report, out / "trace.csv")
    summary = {k: payload[k] for k in ("primal_value", "dual_bound", "duality_gap", "iterations", "fw_gap", "converged")}
    print(json.dumps(summary if out is not None else payload, indent=1))
    tol = args.gap_tol if args.gap_tol is not None else gap_tol
    ok = report.converged and report.duality_gap is not None and report.duality_gap <= tol
    if not ok:
        print(
            f"not converged: fw_gap={report.fw_gap:.3g}, duality_gap={report.duality_gap}, tol={tol:.3g}",
            file=sys.stderr,
        )
    return EXIT_OK if ok else EXIT_NOT_CONVERGED


def cmd_certify(args: argparse.Namespace) -> int:
    eps = _epsilon(args.epsilon)
    f = _file_or_builder(args.x, "X")
    g = _file_or_builder(args.y, "Y")
    if abs(f.step - g.step) > 1e-12 * max(f.step, g.step):
        raise InputError(f"grid mismatch: X has step {f.step!r}, Y has step {g.step!r}")
    cert, report = certify(f, g, eps, audit_window=_parse_window(args.window))
    payload = io.verification_to_dict(report)
    print(json.dumps(payload, indent=1))
    out = _out_dir(args.out)
    if out is not None:
        io.write_json(payload, out / "verification.json")
        io.write_diagnostic(cert, g, out / "margins.csv")
    return EXIT_OK if report.passed else EXIT_NOT_CONVERGED


def cmd_binomial(args: argparse.Namespace) -> int:
    if args.epsilon is not None and args.frac_of_eps_star is not None:
        raise InputError("give --epsilon or --frac-of-eps-star, not both")
    if not 0.0 < args.p < 1.0:
        raise InputError("p must lie in (0, 1)")
    if args.frac_of_eps_star is not None:
        eps = args.frac_of_eps_star * critical_point(max(args.p, 1.0 - args.p))[1]
    elif args.epsilon is not None:
        eps = args.epsilon
    else:
        raise InputError("give --epsilon or --frac-of-eps-star")
    _epsilon(eps)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        sol = binomial_small_eps(args.p, eps)
    payload = sol.to_dict()
    payload["primal_value"] = sol.posterior_variance
    payload["g_star"] = io.pmf_to_dict(sol.noise_law())
    if sol.message:
        print(sol.message, file=sys.stderr)
    else:
        ver = certify_closed_form(sol)
        payload["verification"] = io.verification_to_dict(ver)
        payload["duality_gap"] = ver.gap
    text = json.dumps(io.to_jsonable(payload), indent=1)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def certify_closed_form(sol):
    return verify_certificate(sol.certificate(), sol.x_law(), sol.noise_law(original=False), feas_tol=1e-10)


def cmd_monotonicity(args: argparse.Namespace) -> int:
    f = center(_file_or_builder(args.x, "X"))
    lambdas = _parse_lambdas(args.lambdas)
    if args.y.strip() in ("gauss", "gaussian"):
        # a bare Gaussian gets sd 1 on a grid fine enough for every lambda
        try:
            step = args.step if args.step is not None else noise_step_for(lambdas, f.step)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        g = gaussian_discretized(1.0, step, 1e-10)
    else:
        g = _file_or_builder(args.y, "Y")
    if args.center_y:
        g = center(g)
    try:
        curve = monotonicity_curve(f, g, lambdas, args.x, args.y)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    lines = ["lambda,V"] + [f"{lam!r},{v!r}" for lam, v in curve.rows()]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_figure(args: argparse.Namespace) -> int:
    ids = list(FIGURE_IDS) if args.id == "all" else [args.id]
    status = EXIT_OK
    for fig in ids:
        run = reproduce_figure(fig, args.out, n=args.n, threads=args.threads)
        r = run.report
        ok = r.converged and r.duality_gap is not None and r.duality_gap <= GAP_TOL
        print(f"{fig}: primal={r.primal_value!r} gap={r.duality_gap!r} converged={r.converged} -> {Path(args.out) / fig}")
        if not ok:
            status = EXIT_NOT_CONVERGED
    return status


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors are input errors (exit 1); argparse would use 2."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lfnoise", description="Least favorable noise laws for prediction.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="find the noise law minimizing var E[X|X+Y] under var Y <= eps")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--pmf", help="law of X as PMF JSON or CSV")
    src.add_argument("--builder", help="law of X as name:params, e.g. bernoulli:0.5 or poisson:2")
    p.add_argument("--center", action="store_true", help="center X before solving")
    p.add_argument("--epsilon", type=float, required=True, help="variance bound on Y")
    p.add_argument("--window", help="noise support window Y_MIN:Y_MAX")
    p.add_argument("--offset", type=float, default=None, help="fix the noise lattice offset instead of searching")
    p.add_argument("--fw-gap-tol", type=float, default=None)
    p.add_argument("--gap-tol", type=float, default=None, help="duality gap accepted for exit 0")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--out", help="directory for report.json, g_star.csv, diagnostic.csv, trace.csv")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("certify", help="check a proposed noise law with a dual certificate")
    p.add_argument("--x", required=True, help="law of X: PMF file or builder spec")
    p.add_argument("--y", required=True, help="law of Y: PMF file or builder spec")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--window", help="audit window Y_MIN:Y_MAX in the coordinates of Y")
    p.add_argument("--out", help="directory for verification.json and margins.csv")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("binomial", help="closed-form optimum for X ~ B(1,p) and small eps")
    p.add_argument("p", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--frac-of-eps-star", type=float)
    p.add_argument("--out", help="write the JSON here as well")
    p.set_defaults(func=cmd_binomial)

    p = sub.add_parser("monotonicity", help="V(lambda) = var E[X|X+lambda Y] over integer lambdas")
    p.add_argument("--x", required=True, help="law of X: PMF file or builder spec (centered)")
    p.add_argument("--y", required=True, help="law of Y: PMF file or builder spec")
    p.add_argument("--lambdas", default="1..6", help="a..b or a comma list")
    p.add_argument("--center-y", action="store_true", help="center Y before scaling")
    p.add_argument("--step", type=float, help="grid step for a bare 'gauss' noise (default: step of X / lcm(lambdas))")
    p.add_argument("--out", help="CSV file for lambda,V")
    p.set_defaults(func=cmd_monotonicity)

    p = sub.add_parser("figure", help="solve, certify and dump the data behind a figure")
    p.add_argument("id", choices=list(FIGURE_IDS) + ["all"])
    p.add_argument("--out", default="figures")
    p.add_argument("--n", type=int, default=DEFAULT_UNIFORM_SIZE, help="support size of the uniform laws")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_figure)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, io.FormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
