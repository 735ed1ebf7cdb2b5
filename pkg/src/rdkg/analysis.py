"""Trace analytics: knee point, coverage and report emission.

The refinement loop records one (rate, distortion) point per iteration;
this module turns the resulting trace into the operating-point analysis
(knee detection on normalized axes), the coverage score, and the files
downstream plotting consumes. All floating-point output is written with
9 significant digits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InputError
from .ot import Coupling

COVERAGE_PERCENTILE = 30.0
_COLLINEAR_EPS = 1e-9


@dataclass
class RdPoint:
    t: int
    rate: float
    distortion: float
    objective: float
    structure: float
    feature: float


@dataclass
class RdTrace:
    beta: float
    points: list[RdPoint] = field(default_factory=list)
    edits: list[list[dict]] = field(default_factory=list)
    incomplete: bool = False


def knee_point(points: list[RdPoint]) -> int:
    """Index of the trace point farthest from the first-to-last chord.

    Rate and distortion are each min-max normalized over the trace
    before measuring perpendicular distance, otherwise rate (tens to
    hundreds) dwarfs distortion (below 1) and the distance degenerates
    to the vertical one. Ties break by lowest objective, then lowest
    iteration; a collinear trace falls back to the objective minimizer.
    """
    if len(points) < 2:
        raise InputError("trace too short: knee needs at least 2 points")
    rates = np.array([p.rate for p in points])
    dists = np.array([p.distortion for p in points])
    x = _normalize_axis(rates)
    y = _normalize_axis(dists)
    ax, ay = x[0], y[0]
    bx, by = x[-1], y[-1]
    chord = np.hypot(bx - ax, by - ay)
    if chord < _COLLINEAR_EPS:
        perp = np.zeros(len(points))
    else:
        perp = np.abs((bx - ax) * (ay - y) - (ax - x) * (by - ay)) / chord
    best = perp.max()
    if best < _COLLINEAR_EPS:
        return min(range(len(points)), key=lambda i: (points[i].objective, points[i].t))
    tied = [i for i in range(len(points)) if perp[i] == best]
    return min(tied, key=lambda i: (points[i].objective, points[i].t))


def coverage_tolerance(
    feature_costs: np.ndarray,
    percentile: float = COVERAGE_PERCENTILE,
    row_min: bool = False,
) -> float:
    """Feature-distance tolerance: a percentile of the cost distribution.

    By default the percentile (linear interpolation between closest
    ranks) is taken over all N*M entries; row_min restricts it to each
    segment's best cost.
    """
    if feature_costs.size == 0:
        raise InputError("empty feature-cost matrix")
    values = feature_costs.min(axis=1) if row_min else feature_costs
    return float(np.percentile(values, percentile))


def covered_fraction(
    feature_costs: np.ndarray, pi: Coupling | np.ndarray, tolerance: float
) -> float:
    """Fraction of segments whose best-aligned node cost is within tolerance.

    Best-aligned = per-row argmax of the coupling, ties to the lowest
    column index.
    """
    plan = pi.matrix if isinstance(pi, Coupling) else np.asarray(pi)
    if plan.shape != feature_costs.shape:
        raise InputError("coupling and feature-cost shapes differ")
    best = plan.argmax(axis=1)
    costs = feature_costs[np.arange(plan.shape[0]), best]
    return float((costs <= tolerance).mean())


def coverage(
    feature_costs: np.ndarray,
    pi: Coupling | np.ndarray,
    percentile: float = COVERAGE_PERCENTILE,
    row_min: bool = False,
) -> float:
    """Coverage score in [0, 1] at the percentile-derived tolerance."""
    return covered_fraction(
        feature_costs, pi, coverage_tolerance(feature_costs, percentile, row_min)
    )


def emit_report(
    trace: RdTrace,
    coverage_before: float | None,
    coverage_after: float | None,
    knee: int | None,
    out_dir: str | Path,
    config_echo: dict | None = None,
) -> dict[str, Path]:
    """Write rd_curve.csv, report.json and plot_data.json into out_dir.

    Returns the paths written. Outputs are deterministic: rerunning on
    the same trace produces byte-identical files.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "rd_curve": out / "rd_curve.csv",
        "report": out / "report.json",
        "plot_data": out / "plot_data.json",
    }

    lines = ["t,rate,distortion,objective,structure,feature"]
    for p in trace.points:
        lines.append(
            f"{p.t},{_fmt(p.rate)},{_fmt(p.distortion)},{_fmt(p.objective)},"
            f"{_fmt(p.structure)},{_fmt(p.feature)}"
        )
    paths["rd_curve"].write_text("\n".join(lines) + "\n", encoding="utf-8")

    knee_entry = None
    if knee is not None:
        kp = trace.points[knee]
        knee_entry = {
            "t": kp.t,
            "rate": _round9(kp.rate),
            "distortion": _round9(kp.distortion),
            "objective": _round9(kp.objective),
        }
    report = {
        "beta": _round9(trace.beta),
        "points": len(trace.points),
        "incomplete": trace.incomplete,
        "knee_index": knee,
        "knee_point": knee_entry,
        "coverage_before": _round9(coverage_before),
        "coverage_after": _round9(coverage_after),
        "config": config_echo or {},
    }
    paths["report"].write_text(
        json.dumps(report, ensure_ascii=False, indent=1), encoding="utf-8"
    )

    rates = np.array([p.rate for p in trace.points])
    dists = np.array([p.distortion for p in trace.points])
    norm_r = _normalize_axis(rates)
    norm_d = _normalize_axis(dists)
    iso = []
    if knee_entry is not None and trace.beta > 0:
        for offset in (-10.0, -5.0, 0.0, 5.0, 10.0):
            level = knee_entry["objective"] + offset
            iso.append(
                {
                    "objective": _round9(level),
                    # distortion = intercept + slope * rate along the contour
                    "intercept": _round9(level / trace.beta),
                    "slope": _round9(-1.0 / trace.beta),
                }
            )
    plot_data = {
        "points": [
            {
                "t": p.t,
                "rate": _round9(p.rate),
                "distortion": _round9(p.distortion),
                "rate_norm": _round9(float(norm_r[i])),
                "distortion_norm": _round9(float(norm_d[i])),
                "objective": _round9(p.objective),
            }
            for i, p in enumerate(trace.points)
        ],
        "knee_index": knee,
        "iso_objective": {"beta": _round9(trace.beta), "lines": iso},
    }
    paths["plot_data"].write_text(
        json.dumps(plot_data, ensure_ascii=False, indent=1), encoding="utf-8"
    )
    return paths


# --- trace persistence (JSON lines, one record per iteration) ---------------


def save_trace(trace: RdTrace, path: str | Path) -> None:
    rows = []
    for i, p in enumerate(trace.points):
        edits = trace.edits[i] if i < len(trace.edits) else []
        rows.append(
            json.dumps(
                {
                    "t": p.t,
                    "rate": _round9(p.rate),
                    "distortion": _round9(p.distortion),
                    "structure": _round9(p.structure),
                    "feature": _round9(p.feature),
                    "objective": _round9(p.objective),
                    "edits": edits,
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def load_trace(path: str | Path, beta: float | None = None) -> RdTrace:
    """Read a JSONL trace. beta, when not given, is recovered from the
    first point with nonzero distortion (objective = rate + beta * distortion).
    """
    points: list[RdPoint] = []
    edits: list[list[dict]] = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            points.append(
                RdPoint(
                    t=int(row["t"]),
                    rate=float(row["rate"]),
                    distortion=float(row["distortion"]),
                    objective=float(row["objective"]),
                    structure=float(row["structure"]),
                    feature=float(row["feature"]),
                )
            )
            edits.append(row.get("edits", []))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed trace at line {lineno}: {exc}") from exc
    if not points:
        raise InputError("empty trace file")
    if beta is None:
        beta = 0.0
        for p in points:
            if p.distortion > 0:
                beta = (p.objective - p.rate) / p.distortion
                break
    return RdTrace(beta=beta, points=points, edits=edits)


def _normalize_axis(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        return (values - lo) / (hi - lo)
    return np.zeros_like(values, dtype=np.float64)


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def _round9(x):
    if x is None:
        return None
    return float(f"{float(x):.9g}")
