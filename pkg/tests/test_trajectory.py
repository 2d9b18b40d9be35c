import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subvp.errors import ParseError, ValidationError
from subvp.geometry import EulerAngles, SphericalCoord, angles_to_units, euler_to_spherical
from subvp.trajectory import (
    Trajectory,
    TrajectorySample,
    build_windows,
    export_trajectories,
    format_trajectories,
    load_trajectories,
    parse_trajectories,
    resample,
    window_offsets,
)


def haversine(phi1, th1, phi2, th2):
    la1, la2 = math.pi / 2 - th1, math.pi / 2 - th2
    a = math.sin((la2 - la1) / 2) ** 2 + math.cos(la1) * math.cos(la2) * math.sin((phi2 - phi1) / 2) ** 2
    return 2 * math.asin(min(1.0, math.sqrt(a)))


def test_load_two_rows_one_user(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("user_id,video_id,t,phi,theta\nu1,v1,0.0,0.1,1.5\nu1,v1,0.5,0.2,1.4\n")
    (tr,) = load_trajectories(p)
    assert (tr.user_id, tr.video_id, len(tr)) == ("u1", "v1", 2)
    assert tr.samples[1] == TrajectorySample(0.5, SphericalCoord(0.2, 1.4))


def test_grouping_two_users():
    text = "user_id,video_id,t,phi,theta\nu1,v1,0,0,1\nu2,v1,0,1,1\nu1,v1,1,0,1\nu1,v2,0,0,1\n"
    trs = parse_trajectories(text)
    assert sorted((t.user_id, t.video_id, len(t)) for t in trs) == [("u1", "v1", 2), ("u1", "v2", 1), ("u2", "v1", 1)]


def test_euler_header_converts():
    text = "user_id,video_id,t,yaw,pitch,roll\nu,v,0,0.5,0.2,1.0\n"
    (tr,) = parse_trajectories(text)
    s = euler_to_spherical(EulerAngles(0.5, 0.2, 1.0))
    assert (tr.phi[0], tr.theta[0]) == (s.azimuth, s.inclination)


@pytest.mark.parametrize("text, line", [
    ("user,video,t,phi,theta\n", 1),
    ("", 1),
    ("user_id,video_id,t,phi,theta\nu,v,0,abc,1\n", 2),
    ("user_id,video_id,t,phi,theta\nu,v,0,0,1\nu,v,1,0\n", 3),
    ("user_id,video_id,t,phi,theta\nu,v,0,0,4.0\n", 2),
    ("user_id,video_id,t,phi,theta\nu,v,0,nan,1\n", 2),
    ("user_id,video_id,t,yaw,pitch,roll\nu,v,0,0,2.0,0\n", 2),
    ("user_id,video_id,t,phi,theta\n,v,0,0,1\n", 2),
])
def test_schema_errors_are_positioned(text, line):
    with pytest.raises(ParseError) as exc:
        parse_trajectories(text)
    assert exc.value.line == line


def test_non_monotonic_time_is_validation_error():
    with pytest.raises(ValidationError, match="line 3"):
        parse_trajectories("user_id,video_id,t,phi,theta\nu,v,1,0,1\nu,v,0.5,0,1\n")
    with pytest.raises(ValidationError):
        parse_trajectories("user_id,video_id,t,phi,theta\nu,v,1,0,1\nu,v,1,0,1\n")


def test_export_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    trs = [Trajectory(f"u{i}", "v", np.cumsum(rng.uniform(0.1, 1, 30)), rng.uniform(0, 2 * math.pi, 30),
                      rng.uniform(0, math.pi, 30)) for i in range(3)]
    p = tmp_path / "x.csv"
    export_trajectories(trs, p)
    back = {t.user_id: t for t in load_trajectories(p)}
    for t in trs:
        b = back[t.user_id]
        assert np.max(np.abs(b.t - t.t)) < 1e-9
        assert np.max(np.abs(b.phi - t.phi)) < 1e-9
        assert np.max(np.abs(b.theta - t.theta)) < 1e-9
    assert format_trajectories(load_trajectories(p)) == p.read_text()


def test_trajectory_invariants():
    with pytest.raises(ValidationError):
        Trajectory("u", "v", [], [], [])
    with pytest.raises(ValidationError):
        Trajectory("u", "v", [0, 0], [0, 0], [1, 1])
    with pytest.raises(ValidationError):
        Trajectory("u", "v", [-1], [0], [1])
    tr = Trajectory("u", "v", [0, 1], [-0.5, 7.0], [1, 1])
    assert np.all((tr.phi >= 0) & (tr.phi < 2 * math.pi))
    with pytest.raises(ValueError):
        tr.t[0] = 5.0


def test_resample_identity_on_grid():
    rng = np.random.default_rng(1)
    t = 2.0 + np.arange(20) * 0.5
    tr = Trajectory("u", "v", t, rng.uniform(0, 6, 20), rng.uniform(0.1, 3, 20))
    out = resample(tr, 0.5)
    assert np.max(np.abs(out.t - tr.t)) < 1e-12
    assert np.array_equal(out.phi, tr.phi) and np.array_equal(out.theta, tr.theta)


def test_resample_midpoint_is_halfway_along_great_circle():
    tr = Trajectory("u", "v", [0.0, 1.0], [0.2, 1.4], [1.2, 1.9])
    out = resample(tr, 0.5)
    assert np.allclose(out.t, [0.0, 0.5, 1.0])
    total = haversine(0.2, 1.2, 1.4, 1.9)
    assert haversine(0.2, 1.2, out.phi[1], out.theta[1]) == pytest.approx(total / 2, abs=1e-12)
    assert haversine(out.phi[1], out.theta[1], 1.4, 1.9) == pytest.approx(total / 2, abs=1e-12)


def test_resample_across_seam_stays_short():
    tr = Trajectory("u", "v", [0.0, 1.0], [2 * math.pi - 0.1, 0.1], [math.pi / 2, math.pi / 2])
    mid = resample(tr, 0.5).phi[1]
    assert min(mid, 2 * math.pi - mid) < 1e-12


def test_resample_preserves_duration_and_needs_two_samples():
    tr = Trajectory("u", "v", [0.0, 0.7, 1.3], [0, 0.1, 0.2], [1, 1, 1])
    assert resample(tr, 0.5).t[-1] == 1.0
    with pytest.raises(ValidationError):
        resample(Trajectory("u", "v", [0.0], [0.0], [1.0]), 0.5)
    with pytest.raises(ValidationError):
        resample(tr, 0.0)


def test_resample_antipodal_holds_and_warns(caplog):
    tr = Trajectory("u", "v", [0.0, 1.0], [0.0, math.pi], [math.pi / 2, math.pi / 2])
    with caplog.at_level(logging.WARNING):
        out = resample(tr, 0.5)
    assert out.phi[1] == 0.0 and out.theta[1] == pytest.approx(math.pi / 2)
    assert "antipodal" in caplog.text


times = st.lists(st.floats(0.01, 2.0), min_size=2, max_size=15).map(np.cumsum).filter(lambda t: t[-1] - t[0] >= 0.5)


@settings(max_examples=60, deadline=None)
@given(times, st.integers(0, 2**31))
def test_resample_idempotent_and_on_sphere(t, seed):
    rng = np.random.default_rng(seed)
    tr = Trajectory("u", "v", t, rng.uniform(0, 2 * math.pi, len(t)), rng.uniform(0.05, math.pi - 0.05, len(t)))
    once = resample(tr, 0.5)
    twice = resample(once, 0.5)
    assert np.max(np.abs(twice.t - once.t)) < 1e-12
    assert np.max(np.abs(twice.units - once.units)) < 1e-12
    assert np.allclose(np.linalg.norm(angles_to_units(once.phi, once.theta), axis=-1), 1.0, atol=1e-12)


@pytest.mark.parametrize("T, count", [(12, 3), (10, 1), (9, 0)])
def test_window_counts(T, count):
    feats = np.arange(T)[:, None].astype(float)
    wins = build_windows(feats, np.arange(T), 5, 5, 1)
    assert len(wins) == count


@given(st.integers(1, 40), st.integers(1, 6), st.integers(1, 6), st.integers(1, 4))
def test_window_layout(T, m, n, stride):
    coords = np.arange(T)
    wins = build_windows(coords[:, None], coords, m, n, stride)
    expected = (T - m - n) // stride + 1 if T >= m + n else 0
    assert len(wins) == expected
    for k, w in enumerate(wins):
        assert w.start == k * stride
        assert list(w.input[:, 0]) == list(range(w.start, w.start + m))
        assert list(w.target) == list(range(w.start + m, w.start + m + n))


def test_window_argument_errors():
    with pytest.raises(ValidationError):
        window_offsets(10, 0, 5)
    with pytest.raises(ValidationError):
        build_windows(np.zeros((5, 1)), np.zeros(4))
