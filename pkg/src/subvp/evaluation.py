"""Prediction metrics, per-horizon curves and variant comparison."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError, ValidationError
from .geometry import orthodromic, wrap_longitude


def _angles(coords):
    """Accept a sequence of SphericalCoord or an ``(..., 2)`` array of (phi, theta)."""
    if isinstance(coords, np.ndarray):
        arr = np.asarray(coords, dtype=float)
        if arr.shape[-1] != 2:
            raise ShapeError(f"expected (..., 2) angle array, got {arr.shape}")
        return arr[..., 0], arr[..., 1]
    coords = list(coords)
    phi = np.array([c.azimuth for c in coords], dtype=float)
    theta = np.array([c.inclination for c in coords], dtype=float)
    return phi, theta


def _aligned(pred, truth):
    pp, pt = _angles(pred)
    tp, tt = _angles(truth)
    if pp.shape != tp.shape:
        raise ShapeError(f"prediction/truth misaligned: {pp.shape} vs {tp.shape}")
    if pp.size == 0:
        raise ValidationError("no samples to evaluate")
    return pp, pt, tp, tt


def angle_diff(a, b):
    """Minimal signed difference ``a - b`` in ``[-pi, pi)``."""
    return wrap_longitude(np.subtract(a, b))


def rmse_angles(pred, truth, *, compat=False):
    """RMSE of azimuth and inclination in degrees over wrapped differences.

    ``compat=True`` divides the squared error by two inside the root, the
    nonstandard per-pair variant some reports use.
    """
    pp, pt, tp, tt = _aligned(pred, truth)
    scale = 0.5 if compat else 1.0
    d_phi = angle_diff(pp, tp)
    d_theta = np.subtract(pt, tt)
    rmse_phi = math.sqrt(scale * float(np.mean(np.square(d_phi))))
    rmse_theta = math.sqrt(scale * float(np.mean(np.square(d_theta))))
    return math.degrees(rmse_phi), math.degrees(rmse_theta)


def orthodromic_stats(pred, truth):
    """Mean and population std of great-circle error, plus the per-step means.

    Inputs shaped ``(windows, steps)`` (or ``(windows, steps, 2)`` arrays)
    yield one mean per step; flat inputs are treated as a single step.
    """
    pp, pt, tp, tt = _aligned(pred, truth)
    d = orthodromic(np.pi / 2 - pt, pp, np.pi / 2 - tt, tp)
    per_step = d.mean(axis=0) if d.ndim == 2 else np.array([d.mean()])
    return float(d.mean()), float(d.std()), per_step


@dataclass
class EvalReport:
    rmse_phi: float
    rmse_theta: float
    mean_orthodromic: float
    std_orthodromic: float
    per_step_orthodromic: list
    count: int
    dt: float = 0.5
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.per_step_orthodromic = [float(v) for v in self.per_step_orthodromic]
        vals = (self.rmse_phi, self.rmse_theta, self.mean_orthodromic, self.std_orthodromic,
                *self.per_step_orthodromic)
        if any(not math.isfinite(v) or v < 0 for v in vals):
            raise ValidationError("report metrics must be finite and non-negative")

    @property
    def n(self):
        return len(self.per_step_orthodromic)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def evaluate(pred, truth, *, dt=0.5, compat=False, extra=None) -> EvalReport:
    """Full report for ``(windows, n)`` predictions against truth."""
    rmse_phi, rmse_theta = rmse_angles(pred, truth, compat=compat)
    mean, std, per_step = orthodromic_stats(pred, truth)
    count = int(np.size(_angles(truth)[0]))
    return EvalReport(rmse_phi, rmse_theta, mean, std, per_step, count, dt, dict(extra or {}))


def write_curve(path, report: EvalReport):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["step", "seconds_ahead", "mean_orthodromic"])
        for i, v in enumerate(report.per_step_orthodromic, start=1):
            w.writerow([i, repr(round(i * report.dt, 9)), repr(v)])


def rank(reports: dict):
    """Names ordered by mean orthodromic error, then rmse_theta, then name."""
    return sorted(reports, key=lambda k: (reports[k].mean_orthodromic, reports[k].rmse_theta, k))


def compare(reports: dict):
    """Ranked comparison rows; all reports must share the same horizon."""
    if len(reports) < 2:
        raise ValidationError("compare needs at least two reports")
    horizons = {r.n for r in reports.values()}
    if len(horizons) != 1:
        raise ValidationError(f"inconsistent prediction horizons: {sorted(horizons)}")
    rows = []
    for pos, name in enumerate(rank(reports), start=1):
        r = reports[name]
        rows.append({"rank": pos, "name": name, "mean_orthodromic": r.mean_orthodromic,
                     "std_orthodromic": r.std_orthodromic, "rmse_phi": r.rmse_phi,
                     "rmse_theta": r.rmse_theta, "count": r.count})
    return rows


def format_table(rows):
    head = f"{'rank':>4}  {'model':<20} {'orthodromic':>18} {'rmse_phi':>9} {'rmse_theta':>10}"
    lines = [head]
    for r in rows:
        ortho = f"{r['mean_orthodromic']:.4f} ± {r['std_orthodromic']:.4f}"
        lines.append(f"{r['rank']:>4}  {r['name']:<20} {ortho:>18} "
                     f"{r['rmse_phi']:>9.2f} {r['rmse_theta']:>10.2f}")
    return "\n".join(lines)


def write_comparison(out_dir, reports: dict):
    """Write ``comparison.csv`` plus one curve CSV per model; returns the rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare(reports)
    with open(out / "comparison.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    for name, rep in reports.items():
        write_curve(out / f"curve_{name}.csv", rep)
    return rows

