"""Head-trajectory ingestion, resampling and sliding windows."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry
from .errors import ParseError, ValidationError
from .geometry import EulerAngles, SphericalCoord

log = logging.getLogger(__name__)

SPHERICAL_HEADER = ["user_id", "video_id", "t", "phi", "theta"]
EULER_HEADER = ["user_id", "video_id", "t", "yaw", "pitch", "roll"]


@dataclass(frozen=True)
class TrajectorySample:
    t: float
    coord: SphericalCoord


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Time-ordered viewport centers of one user on one video.

    Stored columnar: ``t``, ``phi`` and ``theta`` are equal-length float arrays.
    """

    user_id: str
    video_id: str
    t: np.ndarray
    phi: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        phi = geometry.wrap_azimuth(np.asarray(self.phi, dtype=float))
        theta = np.asarray(self.theta, dtype=float)
        phi = np.atleast_1d(phi)
        if not (t.ndim == 1 and t.shape == phi.shape == theta.shape):
            raise ValidationError("t, phi and theta must be 1-D arrays of equal length")
        if len(t) < 1:
            raise ValidationError(f"trajectory {self.user_id}/{self.video_id} has no samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(phi)) and np.all(np.isfinite(theta))):
            raise ValidationError("trajectory contains non-finite values")
        if t[0] < 0 or np.any(np.diff(t) <= 0):
            raise ValidationError(f"timestamps of {self.user_id}/{self.video_id} are not strictly increasing from >= 0")
        if np.any(theta < 0) or np.any(theta > math.pi):
            raise ValidationError("inclination outside [0, pi]")
        for name, arr in (("t", t), ("phi", phi), ("theta", theta)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.t)

    @property
    def samples(self):
        return [TrajectorySample(float(t), SphericalCoord(float(p), float(q)))
                for t, p, q in zip(self.t, self.phi, self.theta)]

    @property
    def units(self):
        return geometry.angles_to_units(self.phi, self.theta)

    @classmethod
    def from_samples(cls, user_id, video_id, samples):
        return cls(
            user_id, video_id,
            np.array([s.t for s in samples]),
            np.array([s.coord.azimuth for s in samples]),
            np.array([s.coord.inclination for s in samples]),
        )


def _float(value, line, column):
    try:
        x = float(value)
    except ValueError:
        raise ParseError(f"column {column!r}: {value!r} is not a number", line) from None
    if not math.isfinite(x):
        raise ParseError(f"column {column!r}: non-finite value", line)
    return x


def parse_trajectories(text: str):
    """Parse trajectory CSV text; see :func:`load_trajectories`."""
    reader = csv.reader(io.StringIO(text.lstrip("﻿")))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise ParseError("empty file, header required", 1) from None
    if header == SPHERICAL_HEADER:
        euler = False
    elif header == EULER_HEADER:
        euler = True
    else:
        raise ParseError(f"unrecognized header {','.join(header)!r}", 1)

    groups = {}
    for line, row in enumerate(reader, 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
        user, video = row[0].strip(), row[1].strip()
        if not user or not video:
            raise ParseError("empty user_id or video_id", line)
        vals = [_float(v, line, c) for v, c in zip(row[2:], header[2:])]
        if euler:
            try:
                s = geometry.euler_to_spherical(EulerAngles(*vals[1:]))
            except ValueError as exc:
                raise ParseError(str(exc), line) from None
            phi, theta = s.azimuth, s.inclination
        else:
            phi, theta = vals[1], vals[2]
            if not 0.0 <= theta <= math.pi:
                raise ParseError(f"theta {theta!r} outside [0, pi]", line)
        rows = groups.setdefault((user, video), [])
        if rows and vals[0] <= rows[-1][0]:
            raise ValidationError(
                f"line {line}: timestamp {vals[0]} of {user}/{video} does not increase"
            )
        if vals[0] < 0:
            raise ValidationError(f"line {line}: negative timestamp")
        rows.append((vals[0], phi, theta))

    out = []
    for (user, video), rows in groups.items():
        arr = np.array(rows)
        out.append(Trajectory(user, video, arr[:, 0], arr[:, 1], arr[:, 2]))
    return out


def load_trajectories(path):
    """Read a trajectory CSV (spherical or Euler header), grouped per user and video."""
    return parse_trajectories(Path(path).read_text(encoding="utf-8"))


def format_trajectories(trajectories) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SPHERICAL_HEADER)
    for tr in trajectories:
        for t, p, q in zip(tr.t, tr.phi, tr.theta):
            w.writerow([tr.user_id, tr.video_id, repr(float(t)), repr(float(p)), repr(float(q))])
    return buf.getvalue()


def export_trajectories(trajectories, path):
    Path(path).write_text(format_trajectories(trajectories), encoding="utf-8")


def resample(traj: Trajectory, dt: float = 0.5) -> Trajectory:
    """Resample onto ``t0 + k*dt`` by great-circle interpolation."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if len(traj) < 2:
        raise ValidationError("resampling needs at least two samples")
    t = traj.t
    k = int(math.floor((t[-1] - t[0]) / dt + 1e-9))
    grid = t[0] + np.arange(k + 1) * dt
    units = traj.units
    idx = np.clip(np.searchsorted(t, grid, side="right") - 1, 0, len(t) - 1)
    exact = t[idx] == grid
    nxt = np.minimum(idx + 1, len(t) - 1)
    span = t[nxt] - t[idx]
    frac = np.where(exact | (span <= 0), 0.0, (grid - t[idx]) / np.where(span > 0, span, 1.0))
    out, degenerate = geometry.slerp_units(units[idx], units[nxt], frac)
    if np.any(degenerate & ~exact):
        # antipodal brackets: hold the previous sample
        bad = degenerate & ~exact
        log.warning("%s/%s: %d antipodal brackets, holding previous value",
                    traj.user_id, traj.video_id, int(bad.sum()))
        out[bad] = units[idx[bad]]
    phi, theta = geometry.units_to_angles(out)
    phi = np.where(exact, traj.phi[idx], phi)
    theta = np.where(exact, traj.theta[idx], theta)
    return Trajectory(traj.user_id, traj.video_id, grid, phi, theta)


@dataclass(frozen=True, eq=False)
class WindowedSample:
    start: int
    input: np.ndarray
    target: np.ndarray


def window_offsets(length: int, m: int = 5, n: int = 5, stride: int = 1):
    """Start offsets of every full ``m + n`` window in a series of ``length`` steps."""
    if m < 1 or n < 1 or stride < 1:
        raise ValidationError("m, n and stride must be >= 1")
    if length < m + n:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, length - m - n + 1, stride, dtype=np.int64)


def build_windows(features, coords, m: int = 5, n: int = 5, stride: int = 1):
    """Split aligned per-step series into ``(m inputs, n targets)`` windows."""
    features = np.asarray(features)
    coords = np.asarray(coords)
    if len(features) != len(coords):
        raise ValidationError(f"{len(features)} feature steps but {len(coords)} coordinate steps")
    return [
        WindowedSample(int(i), features[i:i + m], coords[i + m:i + m + n])
        for i in window_offsets(len(features), m, n, stride)
    ]
