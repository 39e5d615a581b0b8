"""Pose error metric (mean per-point displacement) and run aggregation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .geometry import dq_apply
from .potentials import part_template

MODEL_POINT_DENSITY = 500.0


def model_points(geom):
    """Fixed surface cloud used for the error metric, seeded by content."""
    return part_template(geom, MODEL_POINT_DENSITY)


def add_metric(est, gt, points):
    """Mean Euclidean displacement of ``points`` between the two poses.

    Symmetric in its pose arguments and exactly delta for a pure
    translation by delta.
    """
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ValueError("model point set is empty")
    diff = dq_apply(est, points) - dq_apply(gt, points)
    return float(np.linalg.norm(diff, axis=-1).mean())


@dataclass(frozen=True)
class AddResult:
    per_part: dict  # part id -> meters
    mean: float

    @staticmethod
    def from_poses(estimates, gt_poses, model):
        per_part = {
            pid: add_metric(estimates[pid], gt_poses[pid], model_points(model.parts[pid]))
            for pid in model.parts
        }
        return AddResult(per_part, float(np.mean(list(per_part.values()))))


def aggregate_runs(traces, ci=0.95, bootstrap=1000, seed=0):
    """Per-iteration median with a percentile-bootstrap confidence band.

    ``traces`` is (runs, iterations); rows must align. Returns a dict of
    arrays: median, ci_lo, ci_hi, each of length iterations.
    """
    traces = [np.asarray(t, dtype=float) for t in traces]
    lengths = {len(t) for t in traces}
    if len(lengths) != 1:
        raise ValueError(f"ragged traces: lengths {sorted(lengths)}")
    traces = np.stack(traces)
    runs = len(traces)
    median = np.median(traces, axis=0)
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, runs, size=(bootstrap, runs))
    boot = np.median(traces[idx], axis=1)  # (bootstrap, iterations)
    alpha = (1.0 - ci) / 2.0
    lo = np.quantile(boot, alpha, axis=0)
    hi = np.quantile(boot, 1.0 - alpha, axis=0)
    return {"median": median, "ci_lo": lo, "ci_hi": hi}


RESULT_FIELDS = ("run_id", "iteration", "part_id", "add_m", "method")


def results_to_csv(rows):
    """Rows of (run_id, iteration, part_id, add_m, method) to CSV text."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_FIELDS)
    for row in rows:
        run_id, iteration, part_id, add_m, method = row
        writer.writerow([run_id, iteration, part_id, f"{float(add_m):.9g}", method])
    return buf.getvalue()


def results_from_csv(text):
    reader = csv.DictReader(io.StringIO(text))
    rows = []
    for rec in reader:
        rows.append((
            rec["run_id"], int(rec["iteration"]), rec["part_id"],
            float(rec["add_m"]), rec["method"],
        ))
    return rows
