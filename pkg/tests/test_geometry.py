import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from motioncloud import geometry as G
from motioncloud.eigenspace import Trajectory


def circle(r=2.0, n=120, turns=1.0):
    t = np.linspace(0, 2 * np.pi * turns, n)
    return np.c_[r * np.cos(t), r * np.sin(t), np.zeros(n)]


def helix(a=1.0, b=0.5, n=200, turns=3.0):
    t = np.linspace(0, 2 * np.pi * turns, n)
    return np.c_[a * np.cos(t), a * np.sin(t), b * t]


def random_smooth(rng, n=60, modes=3):
    t = np.linspace(0, 1, n)
    out = np.zeros((n, 3))
    for k in range(1, modes + 1):
        amp = rng.normal(0, 1.0 / k, (2, 3))
        out += amp[0] * np.sin(2 * np.pi * k * t)[:, None] + amp[1] * np.cos(2 * np.pi * k * t)[:, None]
    return out


def interior(curve, n=50, trim=0.1):
    return np.linspace(trim * curve.length, (1 - trim) * curve.length, n)


def test_circle_curvature_and_torsion():
    c = G.fit_spline(circle())
    assert c.length == pytest.approx(4 * np.pi, rel=1e-3)
    k, t, deg = G.curvature_torsion_at(c, interior(c))
    assert np.all(np.abs(k - 0.5) <= 0.005)
    assert np.all(np.abs(t) <= 1e-3)
    assert not deg.any()


def test_helix_curvature_and_torsion():
    a, b = 1.0, 0.5
    c = G.fit_spline(helix(a, b))
    k, t, _ = G.curvature_torsion_at(c, interior(c))
    kappa, tau = a / (a * a + b * b), b / (a * a + b * b)
    assert np.all(np.abs(k - kappa) <= 0.01 * kappa)
    assert np.all(np.abs(t - tau) <= 0.01 * tau)


def test_planar_loop_binormal_matches_plane():
    # a limacon drawn in a tilted plane
    th = np.linspace(0, 2 * np.pi, 150)
    r = 1.0 + 0.6 * np.cos(th)
    flat = np.c_[r * np.cos(th), r * np.sin(th), np.zeros_like(th)]
    rot = Rotation.from_euler("xyz", [0.4, -0.7, 0.2])
    pts = rot.apply(flat) + [3.0, -1.0, 2.0]
    normal = rot.apply([0.0, 0.0, 1.0])
    sig = G.cloud_signature(pts)
    svd = G.fit_plane_svd(pts)
    assert abs(sig.mean_binormal @ normal) >= 0.999
    assert abs(svd @ normal) >= 0.999
    assert abs(sig.mean_binormal @ svd) >= 0.999


def test_segments_tile_trimmed_arc():
    c = G.fit_spline(helix())
    segs = G.segment_curve(c, 10, 0.5)
    assert len(segs) == 19
    L = c.length
    assert segs[0].s_start == pytest.approx(0.1 * L)
    assert segs[-1].s_end == pytest.approx(0.9 * L)
    assert all(s.length == pytest.approx(0.08 * L) for s in segs)


def test_frames_orthonormal_on_random_trajectories():
    rng = np.random.default_rng(42)
    checked = 0
    for _ in range(100):
        c = G.fit_spline(random_smooth(rng))
        for seg in G.segment_curve(c):
            if not seg.valid:
                continue
            M = np.vstack([seg.t, seg.n, seg.b])
            assert np.allclose(M @ M.T, np.eye(3), atol=1e-6)
            assert np.allclose(np.cross(seg.t, seg.n), seg.b, atol=1e-6)
            checked += 1
    assert checked > 1000


def test_reversal_keeps_kappa_and_tau_and_flips_binormal():
    pts = helix()
    fwd = G.segment_curve(G.fit_spline(pts))
    rev = G.segment_curve(G.fit_spline(pts[::-1]))[::-1]
    for a, b in zip(fwd, rev):
        assert a.kappa == pytest.approx(b.kappa, rel=1e-3)
        # torsion is a property of the point set, not of the direction of travel
        assert a.tau == pytest.approx(b.tau, rel=1e-3)
        assert a.b @ b.b == pytest.approx(-1.0, abs=1e-3)
    s1, s2 = G.cloud_signature(pts), G.cloud_signature(pts[::-1])
    assert abs(s1.mean_binormal @ s2.mean_binormal) == pytest.approx(1.0, abs=1e-6)


def test_straight_line_has_no_plane():
    pts = np.outer(np.linspace(0, 1, 30), [1.0, 2.0, -1.0])
    c = G.fit_spline(pts)
    k, t, deg = G.curvature_torsion_at(c, c.length / 2)
    assert k == pytest.approx(0.0, abs=1e-6) and t == 0.0 and deg
    sig = G.cloud_signature(pts)
    assert not sig.has_plane
    with pytest.raises(G.GeometryError, match="plane undefined"):
        G.mean_binormal(G.segment_curve(c))


def test_static_points_degrade_gracefully():
    sig = G.cloud_signature(np.ones((20, 4)), with_local=True)
    assert sig.radius == 0.0 and not sig.has_plane and sig.segments == []
    assert sig.local.points.shape == (20, 4)


def test_fit_errors():
    with pytest.raises(G.GeometryError, match="too few"):
        G.fit_spline(np.zeros((4, 3)) + np.arange(4)[:, None])
    with pytest.raises(G.GeometryError, match="coincide"):
        G.fit_spline(np.zeros((10, 3)))
    c = G.fit_spline(circle())
    with pytest.raises(G.GeometryError, match="outside"):
        G.curvature_torsion_at(c, c.length * 1.5)
    with pytest.raises(G.GeometryError):
        G.fit_plane_svd(np.outer(np.arange(5.0), [1, 1, 1]))


def test_noisy_circle_is_smoothed():
    rng = np.random.default_rng(3)
    pts = circle(n=200) + rng.normal(0, 0.02, (200, 3))
    c = G.fit_spline(pts)
    k, _, _ = G.curvature_torsion_at(c, interior(c))
    assert np.median(np.abs(k - 0.5)) < 0.1


def test_only_first_dims_are_used():
    pts = np.c_[helix(), np.random.default_rng(0).normal(0, 5, (200, 4))]
    a = G.fit_spline(helix())
    b = G.fit_spline(pts, dims=3)
    assert b.length == pytest.approx(a.length, rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(
    angles=st.tuples(*[st.floats(-np.pi, np.pi)] * 3),
    shift=st.tuples(*[st.floats(-50, 50)] * 3),
    scale=st.floats(0.2, 5.0),
)
def test_similarity_transform_properties(angles, shift, scale):
    base = helix(n=120)
    rot = Rotation.from_euler("xyz", angles)
    moved = scale * rot.apply(base) + shift
    c0, c1 = G.fit_spline(base), G.fit_spline(moved)
    s = np.linspace(0.2, 0.8, 7)
    k0, t0, _ = G.curvature_torsion_at(c0, s * c0.length)
    k1, t1, _ = G.curvature_torsion_at(c1, s * c1.length)
    # rigid motion keeps kappa and tau; uniform scaling divides both by the scale
    assert np.allclose(k1 * scale, k0, rtol=1e-5)
    assert np.allclose(t1 * scale, t0, rtol=1e-5, atol=1e-9)
    b0 = G.cloud_signature(base).mean_binormal
    b1 = G.cloud_signature(moved).mean_binormal
    assert abs(rot.apply(b0) @ b1) == pytest.approx(1.0, abs=1e-6)


def test_signature_round_trip_and_exports(tmp_path):
    sig = G.cloud_signature(helix())
    back = G.signature_from_dict(json.loads(json.dumps(G.signature_to_dict(sig))))
    assert np.allclose(back.centroid, sig.centroid, rtol=1e-8)
    assert np.allclose(back.mean_binormal, sig.mean_binormal, rtol=1e-8)
    assert len(back.segments) == len(sig.segments)
    assert back.segments[3].kappa == pytest.approx(sig.segments[3].kappa, rel=1e-8)
    G.export_signature_json(str(tmp_path / "s.json"), sig)
    G.export_trajectory_csv(str(tmp_path / "t.csv"), Trajectory(helix(n=10)))
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "frame,y1,y2,y3" and len(lines) == 11


def test_local_tuples_follow_the_points():
    pts = helix(n=80)
    sig = G.cloud_signature(pts, with_local=True)
    assert sig.local.points.shape == (80, 3)
    assert np.allclose(np.linalg.norm(sig.local.tangents, axis=1), 1.0)
    assert np.allclose(sig.local.kappa[5:-5], 0.8, rtol=0.01)
