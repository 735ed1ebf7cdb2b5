"""Knee detection, coverage and report emission."""

import json
import math

import numpy as np
import pytest

from rdkg.analysis import (
    RdPoint,
    RdTrace,
    coverage,
    coverage_tolerance,
    covered_fraction,
    emit_report,
    knee_point,
    load_trace,
    save_trace,
)
from rdkg.errors import InputError
from rdkg.ot import Coupling


def points_from(pairs, beta=100.0):
    return [
        RdPoint(t=i, rate=r, distortion=d, objective=r + beta * d,
                structure=d * 0.4, feature=d * 0.6)
        for i, (r, d) in enumerate(pairs)
    ]


def perpendicular_oracle(pairs):
    """Hand evaluation: normalize both axes, distances to the chord."""
    rates = [p[0] for p in pairs]
    dists = [p[1] for p in pairs]

    def norm(vals):
        lo, hi = min(vals), max(vals)
        return [(v - lo) / (hi - lo) if hi > lo else 0.0 for v in vals]

    xs, ys = norm(rates), norm(dists)
    ax, ay, bx, by = xs[0], ys[0], xs[-1], ys[-1]
    chord = math.hypot(bx - ax, by - ay)
    out = []
    for x, y in zip(xs, ys):
        out.append(abs((bx - ax) * (ay - y) - (ax - x) * (by - ay)) / chord)
    return out


# --- knee -------------------------------------------------------------------


def test_knee_on_reference_trace():
    pairs = [(1, 10), (2, 4), (3, 3.5), (4, 3.4)]
    oracle = perpendicular_oracle(pairs)
    assert oracle.index(max(oracle)) == 1
    assert knee_point(points_from(pairs)) == 1


def test_knee_invariant_under_rate_scaling():
    pairs = [(1, 10), (2, 4), (3, 3.5), (4, 3.4)]
    scaled = [(r * 10, d) for r, d in pairs]
    assert knee_point(points_from(scaled)) == knee_point(points_from(pairs))


def test_knee_two_points_collinear_rule():
    pts = points_from([(1, 10), (5, 2)])
    assert knee_point(pts) == min((0, 1), key=lambda i: pts[i].objective)


def test_knee_three_collinear_points():
    pts = points_from([(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)])
    assert knee_point(pts) == min(range(3), key=lambda i: pts[i].objective)


def test_knee_requires_two_points():
    with pytest.raises(InputError, match="trace too short"):
        knee_point(points_from([(1, 1)]))


def test_knee_tie_breaks_by_objective():
    # symmetric vee: indices 1 and 3 are equidistant from the chord
    pairs = [(0.0, 4.0), (1.0, 1.0), (2.0, 2.0), (3.0, 1.0), (4.0, 4.0)]
    oracle = perpendicular_oracle(pairs)
    assert oracle[1] == pytest.approx(oracle[3])
    pts = points_from(pairs, beta=1.0)
    assert knee_point(pts) == 1  # same objective shape, lower t wins


# --- coverage -----------------------------------------------------------------


def make_coupling(plan):
    plan = np.asarray(plan, dtype=np.float64)
    return Coupling(plan, plan.sum(axis=1), plan.sum(axis=0))


def test_coverage_all_zero_costs():
    feats = np.zeros((3, 2))
    pi = make_coupling(np.full((3, 2), 1 / 6))
    assert coverage(feats, pi) == 1.0


def test_coverage_single_segment_above_tolerance():
    feats = np.array([[0.9, 0.2]])
    pi = make_coupling([[0.8, 0.2]])  # best aligned is column 0, cost 0.9
    q = coverage_tolerance(feats)
    assert q < 0.9
    assert coverage(feats, pi) == 0.0


def test_coverage_reference_2x2():
    feats = np.array([[0.1, 0.9], [0.9, 0.9]])
    # oracle: sorted entries [0.1, 0.9, 0.9, 0.9]; linear-interpolated
    # 30th percentile at rank 0.9 -> 0.1 + 0.9 * 0.8 = 0.82
    assert coverage_tolerance(feats) == pytest.approx(0.82)
    assert np.percentile([0.1, 0.9, 0.9, 0.9], 30) == pytest.approx(0.82)
    pi = make_coupling([[0.4, 0.1], [0.1, 0.4]])
    assert coverage(feats, pi) == 0.5  # segment 0 covered, segment 1 not


def test_coverage_permutation_invariance(rng):
    feats = rng.random((6, 4)) * 2
    plan = rng.random((6, 4))
    plan /= plan.sum()
    base = coverage(feats, make_coupling(plan))
    perm = rng.permutation(4)
    assert coverage(feats[:, perm], make_coupling(plan[:, perm])) == base


def test_covered_fraction_monotone_under_improvement(rng):
    feats = rng.random((5, 3))
    plan = rng.random((5, 3))
    plan /= plan.sum()
    pi = make_coupling(plan)
    q = coverage_tolerance(feats)
    base = covered_fraction(feats, pi, q)
    improved = feats.copy()
    best = plan.argmax(axis=1)
    improved[np.arange(5), best] = 0.0  # drop every best-aligned cost
    assert covered_fraction(improved, pi, q) >= base


def test_coverage_row_min_mode():
    feats = np.array([[0.1, 0.9], [0.2, 0.9]])
    q_all = coverage_tolerance(feats)
    q_rows = coverage_tolerance(feats, row_min=True)
    assert q_rows == pytest.approx(np.percentile([0.1, 0.2], 30))
    assert q_rows != q_all


def test_coverage_empty_matrix_rejected():
    with pytest.raises(InputError, match="empty"):
        coverage_tolerance(np.zeros((0, 0)))


# --- reports ----------------------------------------------------------------------


def sample_trace():
    pairs = [(1, 10), (2, 4), (3, 3.5), (4, 3.4)]
    return RdTrace(beta=100.0, points=points_from(pairs),
                   edits=[[], [{"op": "add", "nodes": ["x"], "edges": [],
                                "rationale": "", "iteration": 1}], [], []])


def test_emit_report_files(tmp_path):
    trace = sample_trace()
    knee = knee_point(trace.points)
    paths = emit_report(trace, 0.4, 0.7, knee, tmp_path, {"beta": 100.0})
    csv_lines = paths["rd_curve"].read_text().strip().splitlines()
    assert csv_lines[0] == "t,rate,distortion,objective,structure,feature"
    assert len(csv_lines) == 1 + 4
    report = json.loads(paths["report"].read_text())
    assert report["knee_index"] == knee == 1
    assert report["coverage_before"] == 0.4
    assert report["coverage_after"] == 0.7
    assert report["config"] == {"beta": 100.0}
    plot = json.loads(paths["plot_data"].read_text())
    assert len(plot["points"]) == 4
    levels = [line["objective"] for line in plot["iso_objective"]["lines"]]
    knee_l = trace.points[knee].objective
    assert levels == [knee_l - 10, knee_l - 5, knee_l, knee_l + 5, knee_l + 10]
    for line in plot["iso_objective"]["lines"]:
        assert line["slope"] == pytest.approx(-1.0 / 100.0)
        assert line["intercept"] == pytest.approx(line["objective"] / 100.0)


def test_emit_report_deterministic(tmp_path):
    trace = sample_trace()
    knee = knee_point(trace.points)
    a = tmp_path / "a"
    b = tmp_path / "b"
    emit_report(trace, 0.4, 0.7, knee, a, {})
    emit_report(trace, 0.4, 0.7, knee, b, {})
    for name in ("rd_curve.csv", "report.json", "plot_data.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_trace_round_trip(tmp_path):
    # trace files carry 9 significant digits, so equality holds at that grain
    from rdkg.analysis import _round9

    trace = sample_trace()
    path = tmp_path / "trace.jsonl"
    save_trace(trace, path)
    loaded = load_trace(path)
    assert loaded.beta == pytest.approx(trace.beta)
    for got, want in zip(loaded.points, trace.points):
        assert got.t == want.t
        for name in ("rate", "distortion", "objective", "structure", "feature"):
            assert getattr(got, name) == _round9(getattr(want, name))
    assert loaded.edits == trace.edits
    # a second save of the loaded trace is byte-identical (stable fixed point)
    save_trace(loaded, tmp_path / "trace2.jsonl")
    assert path.read_bytes() == (tmp_path / "trace2.jsonl").read_bytes()


def test_trace_rejects_malformed(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text('{"t": 0, "rate": 1}\n')
    with pytest.raises(InputError, match="line 1"):
        load_trace(path)


def test_trace_rejects_empty(tmp_path):
    path = tmp_path / "trace.jsonl"
    path.write_text("")
    with pytest.raises(InputError, match="empty trace"):
        load_trace(path)


def test_emit_report_zero_beta_skips_iso_lines(tmp_path):
    # a trace whose distortion never moves recovers beta = 0; the report
    # must still emit, just without contour lines
    points = [
        RdPoint(t=0, rate=5.0, distortion=0.0, objective=5.0, structure=0, feature=0),
        RdPoint(t=1, rate=4.0, distortion=0.0, objective=4.0, structure=0, feature=0),
    ]
    trace = RdTrace(beta=0.0, points=points, edits=[[], []])
    paths = emit_report(trace, None, None, knee_point(points), tmp_path)
    plot = json.loads(paths["plot_data"].read_text())
    assert plot["iso_objective"]["lines"] == []


def test_csv_floats_nine_significant_digits(tmp_path):
    trace = RdTrace(
        beta=100.0,
        points=[
            RdPoint(t=0, rate=1 / 3, distortion=2 / 3, objective=1 / 3 + 100 * 2 / 3,
                    structure=0.123456789123, feature=0.2),
            RdPoint(t=1, rate=2.0, distortion=0.5, objective=52.0,
                    structure=0.1, feature=0.9),
        ],
        edits=[[], []],
    )
    paths = emit_report(trace, None, None, 0, tmp_path)
    row = paths["rd_curve"].read_text().splitlines()[1].split(",")
    assert row[1] == f"{1 / 3:.9g}"
    assert row[4] == "0.123456789"
