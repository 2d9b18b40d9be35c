"""Head-pose and sphere geometry.

Conventions
-----------
Engine frame: x right, y up, z forward. Head poses are intrinsic
yaw (about y), then pitch (about x), then roll (about z); positive yaw turns
right, positive pitch looks up. The gaze direction is the rotated forward
axis, so roll never moves it.

Spherical coordinates: inclination ``theta`` is measured from the zenith
(+y), azimuth ``phi`` from forward (+z) counter-clockwise seen from above,
i.e. toward the viewer's left. Looking straight ahead is
``(phi=0, theta=pi/2)``.

Geographic coordinates: latitude ``pi/2 - theta``, longitude ``phi`` wrapped
to ``[-pi, pi)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

TAU = 2.0 * math.pi
_POLE_EPS = 1e-12
_RANGE_TOL = 1e-9


def wrap_azimuth(phi):
    """Wrap angles into ``[0, 2pi)``. Works on scalars and arrays."""
    r = np.mod(phi, TAU)
    r = np.where(r >= TAU, 0.0, r)
    return float(r) if np.ndim(r) == 0 else r


def wrap_longitude(lon):
    """Wrap angles into ``[-pi, pi)``."""
    r = np.mod(np.asarray(lon, dtype=float) + math.pi, TAU)
    r = np.where(r >= TAU, 0.0, r) - math.pi
    return float(r) if np.ndim(r) == 0 else r


def _finite(*values):
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class EulerAngles:
    yaw: float
    pitch: float
    roll: float = 0.0

    def __post_init__(self):
        if not _finite(self.yaw, self.pitch, self.roll):
            raise InvalidInputError(f"non-finite Euler angles: {self}")
        if abs(self.pitch) > math.pi / 2 + _RANGE_TOL:
            raise InvalidInputError(f"pitch {self.pitch!r} outside [-pi/2, pi/2]")
        object.__setattr__(self, "yaw", wrap_longitude(float(self.yaw)))
        object.__setattr__(self, "pitch", min(max(float(self.pitch), -math.pi / 2), math.pi / 2))
        object.__setattr__(self, "roll", wrap_longitude(float(self.roll)))


@dataclass(frozen=True)
class SphericalCoord:
    """Viewport center; ``azimuth`` is wrapped, ``inclination`` range-checked."""

    azimuth: float
    inclination: float

    def __post_init__(self):
        if not _finite(self.azimuth, self.inclination):
            raise InvalidInputError(f"non-finite spherical coordinate: {self}")
        theta = self.inclination
        if theta < -_RANGE_TOL or theta > math.pi + _RANGE_TOL:
            raise InvalidInputError(f"inclination {theta!r} outside [0, pi]")
        object.__setattr__(self, "azimuth", wrap_azimuth(float(self.azimuth)))
        object.__setattr__(self, "inclination", min(max(float(theta), 0.0), math.pi))


@dataclass(frozen=True)
class GeoCoord:
    latitude: float
    longitude: float

    def __post_init__(self):
        if not _finite(self.latitude, self.longitude):
            raise InvalidInputError(f"non-finite geographic coordinate: {self}")
        lat = self.latitude
        if abs(lat) > math.pi / 2 + _RANGE_TOL:
            raise InvalidInputError(f"latitude {lat!r} outside [-pi/2, pi/2]")
        object.__setattr__(self, "latitude", min(max(float(lat), -math.pi / 2), math.pi / 2))
        object.__setattr__(self, "longitude", wrap_longitude(float(self.longitude)))


def euler_to_spherical(e: EulerAngles) -> SphericalCoord:
    """Gaze direction of a head pose."""
    if not isinstance(e, EulerAngles):
        e = EulerAngles(*e)
    x, y, z = (
        math.cos(e.pitch) * math.sin(e.yaw),
        math.sin(e.pitch),
        math.cos(e.pitch) * math.cos(e.yaw),
    )
    return unit_to_spherical(x, y, z)


def spherical_to_unit(s: SphericalCoord):
    """Cartesian unit vector ``(x, y, z)`` in the engine frame."""
    st = math.sin(s.inclination)
    return (-st * math.sin(s.azimuth), math.cos(s.inclination), st * math.cos(s.azimuth))


def unit_to_spherical(x, y, z) -> SphericalCoord:
    norm = math.sqrt(x * x + y * y + z * z)
    if not norm > 0.0 or not math.isfinite(norm):
        raise InvalidInputError("cannot take the direction of a zero or non-finite vector")
    x, y, z = x / norm, y / norm, z / norm
    theta = math.acos(min(max(y, -1.0), 1.0))
    if math.hypot(x, z) < _POLE_EPS:
        return SphericalCoord(0.0, theta)
    return SphericalCoord(math.atan2(-x, z), theta)


def spherical_to_geo(s: SphericalCoord) -> GeoCoord:
    return GeoCoord(math.pi / 2 - s.inclination, s.azimuth)


def geo_to_spherical(g: GeoCoord) -> SphericalCoord:
    return SphericalCoord(g.longitude, math.pi / 2 - g.latitude)


def orthodromic_distance(a: GeoCoord, b: GeoCoord) -> float:
    """Great-circle distance in radians on the unit sphere."""
    return float(orthodromic(a.latitude, a.longitude, b.latitude, b.longitude))


def orthodromic(lat_a, lon_a, lat_b, lon_b):
    """Vectorized spherical law of cosines, clamped to ``[0, pi]``."""
    c = np.sin(lat_a) * np.sin(lat_b) + np.cos(lat_a) * np.cos(lat_b) * np.cos(
        np.subtract(lon_b, lon_a)
    )
    return np.arccos(np.clip(c, -1.0, 1.0))


def spherical_distance(phi_a, theta_a, phi_b, theta_b):
    """Orthodromic distance between (arrays of) spherical coordinates."""
    return orthodromic(
        np.pi / 2 - np.asarray(theta_a), phi_a, np.pi / 2 - np.asarray(theta_b), phi_b
    )


def grid_cell_to_geo(x: int, y: int, width: int, height: int) -> GeoCoord:
    """Center of equirectangular cell ``(x, y)``; row 0 is the north edge."""
    if not (0 <= x < width and 0 <= y < height):
        raise InvalidInputError(f"cell ({x}, {y}) outside a {width}x{height} grid")
    return GeoCoord(
        math.pi / 2 - math.pi * (y + 0.5) / height,
        TAU * (x + 0.5) / width - math.pi,
    )


def grid_centers(width: int, height: int):
    """Latitude and longitude of every cell center, each shaped ``(H, W)``."""
    lon = TAU * (np.arange(width) + 0.5) / width - math.pi
    lat = math.pi / 2 - math.pi * (np.arange(height) + 0.5) / height
    return np.broadcast_to(lat[:, None], (height, width)), np.broadcast_to(
        lon[None, :], (height, width)
    )


def angles_to_units(phi, theta):
    """Arrays of spherical angles to unit vectors, last axis ``(x, y, z)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    st = np.sin(theta)
    return np.stack([-st * np.sin(phi), np.cos(theta), st * np.cos(phi)], axis=-1)


def units_to_angles(v):
    """Inverse of :func:`angles_to_units` for arrays of (not necessarily unit) vectors."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    theta = np.arccos(np.clip(v[..., 1], -1.0, 1.0))
    phi = np.arctan2(-v[..., 0], v[..., 2])
    phi = np.where(np.hypot(v[..., 0], v[..., 2]) < _POLE_EPS, 0.0, phi)
    return wrap_azimuth(phi), theta


def slerp_units(a, b, frac):
    """Great-circle interpolation between unit vectors ``a`` and ``b`` (``(..., 3)``).

    Returns ``(points, degenerate)``; ``degenerate`` marks antipodal pairs where
    the great circle is undefined (those rows fall back to ``a``).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    frac = np.asarray(frac, dtype=float)[..., None]
    dot = np.clip(np.sum(a * b, axis=-1, keepdims=True), -1.0, 1.0)
    omega = np.arccos(dot)
    so = np.sin(omega)
    degenerate = (dot[..., 0] < -1.0 + 1e-12)
    small = so < 1e-9
    safe = np.where(small, 1.0, so)
    wa = np.where(small, 1.0 - frac, np.sin((1.0 - frac) * omega) / safe)
    wb = np.where(small, frac, np.sin(frac * omega) / safe)
    out = wa * a + wb * b
    out = np.where(degenerate[..., None], a, out)
    out = out / np.linalg.norm(out, axis=-1, keepdims=True)
    return out, degenerate
