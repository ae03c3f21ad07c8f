"""Reading and writing laws, reports and diagnostic tables.

PMF JSON is ``{"origin": x, "step": h, "weights": [...]}``.  PMF CSV has the
columns ``point,probability`` preceded by a ``# origin=...,step=...`` comment
so that the grid is recovered exactly; files without the comment are accepted
when their points lie on a regular grid.  Floats are written with ``repr`` so
every value round-trips bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .certificate import DualCertificate, VerificationReport
from .distributions import GridPmf, make_grid_pmf


class FormatError(ValueError):
    """Malformed input file; the message names the file and the offending line or field."""


# ---------------------------------------------------------------------------
# PMFs


def pmf_to_dict(p: GridPmf) -> dict:
    return {"origin": p.origin, "step": p.step, "weights": [float(w) for w in p.weights]}


def pmf_from_dict(obj: Any, source: str = "<json>") -> GridPmf:
    if not isinstance(obj, dict):
        raise FormatError(f"{source}: expected a JSON object with origin, step, weights")
    for key in ("origin", "step", "weights"):
        if key not in obj:
            raise FormatError(f"{source}: missing field {key!r}")
    try:
        origin = float(obj["origin"])
    except (TypeError, ValueError):
        raise FormatError(f"{source}: field 'origin' must be a number") from None
    try:
        step = float(obj["step"])
    except (TypeError, ValueError):
        raise FormatError(f"{source}: field 'step' must be a number") from None
    weights = obj["weights"]
    if not isinstance(weights, list):
        raise FormatError(f"{source}: field 'weights' must be a list of numbers")
    vals = []
    for i, w in enumerate(weights):
        if isinstance(w, bool) or not isinstance(w, (int, float)):
            raise FormatError(f"{source}: weights[{i}] is not a number: {w!r}")
        vals.append(float(w))
    try:
        return make_grid_pmf(origin, step, vals)
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def write_pmf_json(p: GridPmf, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(pmf_to_dict(p), indent=1) + "\n")


def read_pmf_json(path: str | os.PathLike) -> GridPmf:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return pmf_from_dict(obj, str(path))


def write_pmf_csv(p: GridPmf, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# origin={p.origin!r},step={p.step!r}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["point", "probability"])
        for x, w in zip(p.points, p.weights):
            writer.writerow([repr(float(x)), repr(float(w))])


def _parse_grid_comment(line: str, source: str, lineno: int) -> tuple[float, float]:
    fields = {}
    for part in line.lstrip("#").strip().split(","):
        key, sep, val = part.partition("=")
        if not sep:
            raise FormatError(f"{source}: line {lineno}: expected key=value in {line.strip()!r}")
        fields[key.strip()] = val.strip()
    try:
        return float(fields["origin"]), float(fields["step"])
    except (KeyError, ValueError):
        raise FormatError(f"{source}: line {lineno}: grid comment needs numeric origin and step") from None


def read_pmf_csv(path: str | os.PathLike) -> GridPmf:
    source = str(path)
    grid = None
    header_seen = False
    points: list[float] = []
    weights: list[float] = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            if line.startswith("#"):
                if "origin=" in line:
                    grid = _parse_grid_comment(line, source, lineno)
                continue
            row = next(csv.reader([line]))
            if not header_seen:
                header_seen = True
                if [c.strip() for c in row] == ["point", "probability"]:
                    continue
            if len(row) != 2:
                raise FormatError(f"{source}: line {lineno}: expected 2 columns, got {len(row)}")
            try:
                points.append(float(row[0]))
            except ValueError:
                raise FormatError(f"{source}: line {lineno}: point {row[0]!r} is not a number") from None
            try:
                weights.append(float(row[1]))
            except ValueError:
                raise FormatError(f"{source}: line {lineno}: probability {row[1]!r} is not a number") from None
    if not points:
        raise FormatError(f"{source}: no data rows")
    pts = np.asarray(points)
    if grid is None:
        if pts.size == 1:
            origin, step = float(pts[0]), 1.0
        else:
            gaps = np.diff(pts)
            if np.any(gaps <= 0):
                raise FormatError(f"{source}: points must be strictly increasing")
            step = float(gaps.min())
            origin = float(pts[0])
    else:
        origin, step = grid
    idx = (pts - origin) / step
    k = np.rint(idx)
    bad = np.flatnonzero(np.abs(idx - k) > 1e-9 * np.maximum(1.0, np.abs(idx)))
    if bad.size:
        raise FormatError(f"{source}: point {points[bad[0]]!r} is not on the grid origin={origin!r}, step={step!r}")
    if k.min() < 0:
        raise FormatError(f"{source}: points lie below the stated origin")
    w = np.zeros(int(k.max()) + 1)
    for j, val in zip(k.astype(np.int64), weights):
        if w[j] != 0.0:
            raise FormatError(f"{source}: duplicate point {origin + j * step!r}")
        w[j] = val
    try:
        return make_grid_pmf(origin, step, w)
    except ValueError as exc:
        raise FormatError(f"{source}: {exc}") from None


def read_pmf(path: str | os.PathLike) -> GridPmf:
    """Read a PMF from JSON or CSV, chosen by extension (JSON when unsure)."""
    if not Path(path).exists():
        raise FormatError(f"{path}: no such file")
    if str(path).lower().endswith(".csv"):
        return read_pmf_csv(path)
    return read_pmf_json(path)


def write_pmf(p: GridPmf, path: str | os.PathLike) -> None:
    if str(path).lower().endswith(".csv"):
        write_pmf_csv(p, path)
    else:
        write_pmf_json(p, path)


# ---------------------------------------------------------------------------
# reports and tables


def to_jsonable(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if hasattr(value, "value") and isinstance(getattr(value, "value"), str):
        return value.value
    return value


def certificate_to_dict(cert: DualCertificate) -> dict:
    return {
        "alpha": cert.alpha,
        "beta": cert.beta,
        "gamma": cert.gamma,
        "epsilon": cert.epsilon,
        "slack_z": cert.slack_z,
        "second_moment": cert.second_moment,
        "dual_value": cert.dual_value,
        "worst_margin": cert.worst_margin,
        "tail_margin": cert.tail_margin,
        "fit_support": list(cert.fit_support),
    }


def report_to_dict(report) -> dict:
    """Every field of a solve report, with laws as PMF dicts."""
    out = {
        "primal_value": report.primal_value,
        "dual_bound": report.dual_bound,
        "duality_gap": report.duality_gap,
        "iterations": report.iterations,
        "fw_gap": report.fw_gap,
        "converged": report.converged,
        "epsilon": report.epsilon,
        "offset": report.offset,
        "window": list(report.window),
        "centering_shift": report.centering_shift,
        "active_support": [list(a) for a in report.active_support],
        "g_star": pmf_to_dict(report.g_star),
        "trace": [list(t) for t in report.trace],
        "offset_scan": [list(t) for t in report.offset_scan],
        "certificate": certificate_to_dict(report.certificate) if report.certificate is not None else None,
        "verification": report.verification.to_dict() if report.verification is not None else None,
        "closed_form": bool(report.closed_form),
    }
    return to_jsonable(out)


def write_json(obj: Any, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(to_jsonable(obj), indent=1) + "\n")


def write_rows(path: str | os.PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_trace(report, path: str | os.PathLike) -> None:
    write_rows(path, ["iter", "primal", "fw_gap"], report.trace)


def diagnostic_rows(cert: DualCertificate, g_star: GridPmf) -> list[tuple[float, float, float, float, float]]:
    """``(y, D, Q, margin, g_weight)`` over the certificate's audit lattice."""
    g_on = np.zeros(cert.ys.size)
    idx = np.rint((g_star.points - cert.ys[0]) / g_star.step).astype(np.int64)
    inside = (idx >= 0) & (idx < cert.ys.size)
    np.add.at(g_on, idx[inside], g_star.weights[inside])
    return [
        (float(y), float(d), float(q), float(m), float(w))
        for y, d, q, m, w in zip(cert.ys, cert.penalty, cert.quadratic, cert.margins, g_on)
    ]


def write_diagnostic(cert: DualCertificate, g_star: GridPmf, path: str | os.PathLike) -> None:
    write_rows(path, ["y", "D", "Q", "margin", "g_weight"], diagnostic_rows(cert, g_star))


def verification_to_dict(report: VerificationReport) -> dict:
    return to_jsonable(report.to_dict())
