"""Ground-truth saliency heat maps from viewport centers.

Each user contributes a spherical Gaussian of the orthodromic distance between
the viewport center and every cell center; the map of a timestep is the mean
over users. Maps are ``(H, W)`` arrays, row 0 north, column 0 at longitude -pi.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from ._accel import njit
from .errors import ParseError, ValidationError

DEFAULT_SIGMA = math.pi / 30
MAGIC = b"GTSM"


class CoarseGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SaliencyConfig:
    sigma: float = DEFAULT_SIGMA
    width: int = 64
    height: int = 32

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")
        if self.width < 2 or self.height < 2:
            raise ValidationError("grid must be at least 2x2")
        if self.width != 2 * self.height:
            raise ValidationError(f"equirectangular grid needs W = 2H, got {self.width}x{self.height}")
        if self.sigma < 2 * self.cell_arc:
            warnings.warn(
                f"sigma={self.sigma:.4f} rad is under two cells ({self.cell_arc:.4f} rad each); "
                "the kernel is barely resolved", CoarseGridWarning, stacklevel=3)

    @property
    def cell_arc(self):
        return math.pi / self.height


@dataclass(frozen=True, eq=False)
class SaliencyMap:
    values: np.ndarray
    t: int = 0
    width: int = field(init=False)
    height: int = field(init=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValidationError("saliency values must be a 2-D (H, W) array")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "height", v.shape[0])
        object.__setattr__(self, "width", v.shape[1])


@njit
def _frames_loops(sin_lat, cos_lat, lon, grid_sin, grid_cos, grid_lon, inv_two_sigma2):
    # sin_lat etc: (T, N) user terms; grid_*: (H, W)
    T, N = sin_lat.shape
    H, W = grid_sin.shape
    out = np.zeros((T, H, W))
    for t in range(T):
        for y in range(H):
            for x in range(W):
                acc = 0.0
                for u in range(N):
                    c = sin_lat[t, u] * grid_sin[y, x] + cos_lat[t, u] * grid_cos[y, x] * math.cos(
                        grid_lon[y, x] - lon[t, u])
                    if c > 1.0:
                        c = 1.0
                    elif c < -1.0:
                        c = -1.0
                    d = math.acos(c)
                    acc += math.exp(-d * d * inv_two_sigma2)
                out[t, y, x] = acc / N
    return out


def _frames_numpy(sin_lat, cos_lat, lon, grid_sin, grid_cos, grid_lon, inv_two_sigma2):
    T, N = sin_lat.shape
    out = np.empty((T,) + grid_sin.shape)
    for t in range(T):
        c = (sin_lat[t, :, None, None] * grid_sin
             + cos_lat[t, :, None, None] * grid_cos * np.cos(grid_lon - lon[t, :, None, None]))
        d = np.arccos(np.clip(c, -1.0, 1.0))
        out[t] = np.exp(-d * d * inv_two_sigma2).mean(axis=0)
    return out


# numpy's vectorized acos/exp beat the scalar libm calls of the compiled loop
# about twofold here, so the loop kernel is kept only as a cross-check.
_frames = _frames_numpy


def saliency_frames(phi, theta, cfg: SaliencyConfig = None, *, kernel=None):
    """Aggregate maps for many timesteps at once.

    ``phi`` and ``theta`` are ``(T, N)`` arrays (N users per step); returns a
    ``(T, H, W)`` float64 array.
    """
    cfg = cfg or SaliencyConfig()
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if phi.shape != theta.shape or phi.shape[1] < 1:
        raise ValidationError("phi and theta must be (T, N) with N >= 1")
    lat = np.pi / 2 - theta
    lon = geometry.wrap_longitude(phi)
    glat, glon = geometry.grid_centers(cfg.width, cfg.height)
    args = (
        np.ascontiguousarray(np.sin(lat)), np.ascontiguousarray(np.cos(lat)), np.ascontiguousarray(lon),
        np.ascontiguousarray(np.sin(glat)), np.ascontiguousarray(np.cos(glat)), np.ascontiguousarray(glon),
        1.0 / (2.0 * cfg.sigma ** 2),
    )
    return (kernel or _frames)(*args)


def per_user_map(center, cfg: SaliencyConfig = None, t: int = 0) -> SaliencyMap:
    return aggregate_map([center], cfg, t)


def aggregate_map(centers, cfg: SaliencyConfig = None, t: int = 0) -> SaliencyMap:
    """Mean of the per-user maps of ``centers`` (one SphericalCoord per user)."""
    centers = list(centers)
    if not centers:
        raise ValidationError("aggregate_map needs at least one center")
    phi = np.array([[c.azimuth for c in centers]])
    theta = np.array([[c.inclination for c in centers]])
    return SaliencyMap(saliency_frames(phi, theta, cfg)[0], t)


def map_argmax(smap: SaliencyMap):
    """``(x, y)`` of the maximum; ties go to the smallest ``(y, x)``."""
    flat = int(np.argmax(smap.values))
    y, x = divmod(flat, smap.width)
    return x, y


def write_map(smap: SaliencyMap, path):
    header = MAGIC + struct.pack("<III", smap.width, smap.height, smap.t)
    body = np.ascontiguousarray(smap.values, dtype="<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_map(path) -> SaliencyMap:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MAGIC:
        raise ParseError("not a GTSM saliency map file")
    w, h, t = struct.unpack("<III", data[4:16])
    if len(data) != 16 + 4 * w * h:
        raise ParseError(f"expected {w}x{h} float32 payload, file has {len(data) - 16} bytes")
    values = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w).astype(np.float64)
    return SaliencyMap(values, t)


def write_pgm(smap: SaliencyMap, path):
    """8-bit binary PGM; values in [0, 1] are scaled to 0..255."""
    pix = np.clip(np.rint(np.asarray(smap.values) * 255.0), 0, 255).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{smap.width} {smap.height}\n255\n".encode("ascii") + pix.tobytes())
