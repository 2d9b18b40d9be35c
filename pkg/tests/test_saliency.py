import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subvp import saliency
from subvp.errors import ParseError, ValidationError
from subvp.geometry import SphericalCoord, grid_cell_to_geo, orthodromic_distance, spherical_to_geo
from subvp.saliency import (
    CoarseGridWarning,
    SaliencyConfig,
    SaliencyMap,
    aggregate_map,
    map_argmax,
    per_user_map,
    read_map,
    saliency_frames,
    write_map,
    write_pgm,
)

pytestmark = pytest.mark.filterwarnings("ignore::subvp.saliency.CoarseGridWarning")
with warnings.catch_warnings():
    warnings.simplefilter("ignore", CoarseGridWarning)
    CFG = SaliencyConfig()
WIDE = SaliencyConfig(sigma=math.pi / 12)


def scalar_map(center, cfg):
    """Cell-by-cell re-evaluation of the RBF map."""
    g = spherical_to_geo(center)
    out = np.empty((cfg.height, cfg.width))
    for y in range(cfg.height):
        for x in range(cfg.width):
            d = orthodromic_distance(grid_cell_to_geo(x, y, cfg.width, cfg.height), g)
            out[y, x] = math.exp(-d * d / (2 * cfg.sigma ** 2))
    return out


def random_centers(rng, n):
    return [SphericalCoord(rng.uniform(0, 2 * math.pi), math.acos(rng.uniform(-1, 1))) for _ in range(n)]


def test_config_validation_and_warning():
    with pytest.raises(ValidationError):
        SaliencyConfig(sigma=0.0)
    with pytest.raises(ValidationError):
        SaliencyConfig(width=64, height=64)
    with pytest.raises(ValidationError):
        SaliencyConfig(width=1, height=1)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        SaliencyConfig(sigma=math.pi / 30)
        SaliencyConfig(sigma=math.pi / 12)
    assert [w.category for w in rec] == [CoarseGridWarning]


def test_per_user_map_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for center in random_centers(rng, 3) + [SphericalCoord(0.0, 0.0), SphericalCoord(1.0, math.pi)]:
        for cfg in (CFG, WIDE):
            m = per_user_map(center, cfg)
            assert (m.width, m.height) == (cfg.width, cfg.height)
            assert np.max(np.abs(m.values - scalar_map(center, cfg))) < 1e-12


def test_center_cell_is_one_and_sigma_cell_is_exp_half():
    g = grid_cell_to_geo(10, 7, 64, 32)
    center = SphericalCoord(g.longitude, math.pi / 2 - g.latitude)
    m = per_user_map(center, CFG)
    assert m.values[7, 10] == 1.0
    # move the center exactly sigma along the meridian: the original cell is at distance sigma
    moved = SphericalCoord(center.azimuth, center.inclination + CFG.sigma)
    m = per_user_map(moved, CFG)
    assert abs(m.values[7, 10] - math.exp(-0.5)) < 1e-12


def test_values_in_unit_interval():
    rng = np.random.default_rng(1)
    vals = aggregate_map(random_centers(rng, 5), WIDE).values
    assert np.all(vals > 0) and np.all(vals <= 1)


def test_aggregate_is_cellwise_mean():
    rng = np.random.default_rng(2)
    centers = random_centers(rng, 3)
    oracle = sum(scalar_map(c, CFG) for c in centers) / 3
    assert np.max(np.abs(aggregate_map(centers, CFG).values - oracle)) < 1e-12
    c = centers[0]
    assert np.max(np.abs(aggregate_map([c, c], CFG).values - per_user_map(c, CFG).values)) < 1e-15
    assert np.array_equal(aggregate_map([c], CFG).values, per_user_map(c, CFG).values)


def test_aggregate_permutation_invariant():
    rng = np.random.default_rng(3)
    centers = random_centers(rng, 6)
    a = aggregate_map(centers, WIDE).values
    b = aggregate_map(centers[::-1], WIDE).values
    assert np.max(np.abs(a - b)) < 1e-15


def test_aggregate_empty_raises():
    with pytest.raises(ValidationError):
        aggregate_map([], CFG)


def test_monotone_in_distance():
    center = SphericalCoord(0.7, 1.1)
    vals = per_user_map(center, WIDE).values.ravel()
    d = np.array([orthodromic_distance(grid_cell_to_geo(x, y, 64, 32), spherical_to_geo(center))
                  for y in range(32) for x in range(64)])
    order = np.argsort(d)
    dv, vv = d[order], vals[order]
    distinct = np.diff(dv) > 1e-9
    assert np.all(np.diff(vv)[distinct] < 0)


@pytest.mark.parametrize("shift", [1, 5, 32, 63])
def test_rotation_equivariance(shift):
    center = SphericalCoord(0.3, 1.2)
    cell = 2 * math.pi / 64
    base = per_user_map(center, WIDE).values
    rotated = per_user_map(SphericalCoord(center.azimuth + shift * cell, center.inclination), WIDE).values
    assert np.max(np.abs(rotated - np.roll(base, shift, axis=1))) < 1e-9


def test_argmax_examples():
    g = grid_cell_to_geo(40, 9, 64, 32)
    center = SphericalCoord(g.longitude + 0.01, math.pi / 2 - g.latitude + 0.02)
    assert map_argmax(per_user_map(center, CFG)) == (40, 9)
    flat = SaliencyMap(np.ones((32, 64)))
    assert map_argmax(flat) == (0, 0)
    nearly = per_user_map(SphericalCoord(1.0, 1.0), SaliencyConfig(sigma=1e3))
    assert np.ptp(nearly.values) < 1e-5
    ties = np.zeros((4, 8))
    ties[2, 1] = ties[1, 5] = 1.0
    assert map_argmax(SaliencyMap(ties)) == (5, 1)


def test_argmax_two_separated_users():
    a = grid_cell_to_geo(10, 10, 64, 32)
    b = grid_cell_to_geo(45, 20, 64, 32)
    centers = [SphericalCoord(g.longitude, math.pi / 2 - g.latitude) for g in (a, b)]
    x, y = map_argmax(aggregate_map(centers, CFG))
    assert min(max(abs(x - 10), abs(y - 10)), max(abs(x - 45), abs(y - 20))) <= 1


def test_numba_and_numpy_kernels_agree():
    rng = np.random.default_rng(4)
    phi = rng.uniform(0, 2 * math.pi, (4, 7))
    theta = rng.uniform(0, math.pi, (4, 7))
    a = saliency_frames(phi, theta, CFG, kernel=saliency._frames_numpy)
    b = saliency_frames(phi, theta, CFG, kernel=saliency._frames_loops)
    assert a.shape == (4, 32, 64)
    assert np.max(np.abs(a - b)) < 1e-12


def test_frames_match_aggregate_map():
    rng = np.random.default_rng(5)
    phi = rng.uniform(0, 2 * math.pi, (3, 4))
    theta = rng.uniform(0, math.pi, (3, 4))
    frames = saliency_frames(phi, theta, WIDE)
    for t in range(3):
        m = aggregate_map([SphericalCoord(p, q) for p, q in zip(phi[t], theta[t])], WIDE)
        assert np.max(np.abs(frames[t] - m.values)) < 1e-15


def test_frames_shape_errors():
    with pytest.raises(ValidationError):
        saliency_frames(np.zeros((2, 3)), np.zeros((2, 2)), WIDE)


def test_map_file_round_trip(tmp_path):
    m = per_user_map(SphericalCoord(2.0, 1.0), CFG, t=17)
    p = tmp_path / "m.gtsm"
    write_map(m, p)
    raw = p.read_bytes()
    assert raw[:4] == b"GTSM" and len(raw) == 16 + 4 * 64 * 32
    back = read_map(p)
    assert (back.width, back.height, back.t) == (64, 32, 17)
    assert np.array_equal(back.values, m.values.astype(np.float32).astype(np.float64))


def test_map_file_errors(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(ParseError):
        read_map(p)
    write_map(SaliencyMap(np.ones((2, 4))), p)
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ParseError):
        read_map(p)


def test_pgm_export(tmp_path):
    g = grid_cell_to_geo(20, 12, 64, 32)
    m = per_user_map(SphericalCoord(g.longitude, math.pi / 2 - g.latitude), WIDE)
    p = tmp_path / "m.pgm"
    write_pgm(m, p)
    raw = p.read_bytes()
    header = b"P5\n64 32\n255\n"
    assert raw.startswith(header)
    pix = np.frombuffer(raw[len(header):], dtype=np.uint8).reshape(32, 64)
    assert pix.max() == 255 and pix[0, 0] == 0


@settings(max_examples=40, deadline=None)
@given(st.floats(0, 2 * math.pi, exclude_max=True), st.floats(0, math.pi))
def test_map_bounds_property(phi, theta):
    v = per_user_map(SphericalCoord(phi, theta), WIDE).values
    assert np.all(v > 0) and np.all(v <= 1)
