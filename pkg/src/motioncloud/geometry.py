"""Differential geometry of eigenspace trajectories.

A trajectory is fitted with a cubic smoothing spline over the chord-length
parameter, tabulated by arc length, and cut into equal-length overlapping
segments. Each segment carries its Frenet-Serret frame at the midpoint and
its mean curvature and torsion. The segment binormals, weighted by
1/kappa**2 and sign-aligned, give the trajectory's mean osculating plane.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.optimize import brentq
from scipy.stats import chi2

MIN_POINTS = 5
KAPPA_MIN = 1e-8
CROSS_EPS = 1e-16
ARC_SAMPLES = 512


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class GeometryConfig:
    dims: int = 3
    smoothing: float = 0.05
    segments: int = 10
    overlap: float = 0.5
    samples: int = 16
    trim: float = 0.1


@dataclass
class SplineCurve:
    spline: BSpline
    u_table: np.ndarray
    s_table: np.ndarray
    data_u: np.ndarray

    def __post_init__(self):
        self._ders = [self.spline.derivative(k) for k in (1, 2, 3)]

    @property
    def length(self):
        return float(self.s_table[-1])

    def u_at(self, s):
        return np.interp(s, self.s_table, self.u_table)

    def __call__(self, s, der=0):
        """Position (or ``der``-th derivative w.r.t. the spline parameter) at arc length ``s``."""
        u = self.u_at(np.asarray(s, dtype=np.float64))
        if der == 0:
            return self.spline(u)
        return self._ders[der - 1](u)

    def derivatives(self, u):
        return tuple(d(u) for d in self._ders)


@dataclass
class SegmentFrame:
    s_start: float
    s_end: float
    midpoint: np.ndarray
    t: np.ndarray
    n: np.ndarray
    b: np.ndarray
    kappa: float
    tau: float
    valid: bool

    @property
    def length(self):
        return self.s_end - self.s_start


@dataclass
class LocalTuples:
    """Per-point local geometry used by the fuzzy cloud penalty."""

    points: np.ndarray
    tangents: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray


@dataclass
class CloudSignature:
    segments: list
    mean_binormal: np.ndarray
    centroid: np.ndarray
    radius: float
    point_count: int
    label: str = None
    local: LocalTuples = field(default=None, repr=False)
    clip_id: str = ""

    @property
    def has_plane(self):
        return self.mean_binormal is not None


# ---------------------------------------------------------------------------
# spline fitting


def _dedupe(points):
    keep = [0]
    for i in range(1, len(points)):
        if np.linalg.norm(points[i] - points[keep[-1]]) > 1e-12:
            keep.append(i)
    return np.asarray(keep)


def noise_level(points):
    """Robust per-component noise estimate from third differences.

    Uses the norms of the difference vectors, so the estimate is unchanged
    by rotations of the point set.
    """
    if len(points) < 4:
        return 0.0
    d3 = np.diff(points, 3, axis=0)
    # for iid noise sigma, |d3| / (sigma sqrt(20)) follows a chi law with dims dof
    ref = np.sqrt(chi2.ppf(0.5, d3.shape[1]) * 20.0)
    return float(np.median(np.linalg.norm(d3, axis=1)) / ref)


def _penalized_fit(x, y, target_rms):
    n = len(x)
    t = np.r_[[x[0]] * 4, x[2:-2], [x[-1]] * 4]
    eye = np.eye(n)
    basis = BSpline(t, eye, 3)
    B = basis(x)
    if target_rms <= 0:
        return BSpline(t, np.linalg.solve(B, y), 3)
    # Exact integral of B_i'' B_j'' with 2-point Gauss rule per knot span.
    second = basis.derivative(2)
    brk = np.unique(t)
    gl = np.array([-1.0, 1.0]) / np.sqrt(3.0)
    mids = 0.5 * (brk[1:] + brk[:-1])
    half = 0.5 * (brk[1:] - brk[:-1])
    xq = (mids[:, None] + half[:, None] * gl[None, :]).ravel()
    wq = np.repeat(half, 2)
    D2 = second(xq)
    omega = (D2 * wq[:, None]).T @ D2
    BtB = B.T @ B
    Bty = B.T @ y
    norm = np.trace(BtB) / max(np.trace(omega), 1e-300)

    def solve(loglam):
        return np.linalg.solve(BtB + (10.0 ** loglam) * norm * omega, Bty)

    def excess(loglam):
        res = B @ solve(loglam) - y
        return np.sqrt(np.mean(np.sum(res * res, axis=1))) - target_rms

    lo, hi = -14.0, 4.0
    if excess(lo) >= 0:
        loglam = lo
    elif excess(hi) <= 0:
        loglam = hi
    else:
        loglam = brentq(excess, lo, hi, xtol=0.02)
    return BSpline(t, solve(loglam), 3)


def fit_spline(points, dims=3, smoothing=0.05):
    """Cubic smoothing spline through the first ``dims`` coordinates.

    The residual budget is an RMS distance of at most ``smoothing`` times
    the mean cloud radius, capped by the noise level estimated from the
    data itself, so clean curves are interpolated.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(P) < MIN_POINTS:
        raise GeometryError(f"too few points: need >= {MIN_POINTS}, got {len(P)}")
    if P.shape[1] < dims:
        P = np.hstack([P, np.zeros((len(P), dims - P.shape[1]))])
    P = P[:, :dims]
    keep = _dedupe(P)
    if len(keep) < 2:
        raise GeometryError("zero-length trajectory: all points coincide")
    if len(keep) < MIN_POINTS:
        raise GeometryError(f"too few distinct points: need >= {MIN_POINTS}, got {len(keep)}")
    Q = P[keep]
    chord = np.r_[0.0, np.cumsum(np.linalg.norm(np.diff(Q, axis=0), axis=1))]
    if chord[-1] <= 0:
        raise GeometryError("zero-length trajectory")
    x = chord / chord[-1]
    radius = np.linalg.norm(Q - Q.mean(axis=0), axis=1).mean()
    target = min(smoothing * radius, noise_level(Q) * np.sqrt(dims)) if smoothing > 0 else 0.0
    spline = _penalized_fit(x, Q, target)
    u = np.linspace(0.0, 1.0, ARC_SAMPLES)
    speed = np.linalg.norm(spline.derivative(1)(u), axis=1)
    s = np.r_[0.0, np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(u))]
    if not s[-1] > 0 or np.any(np.diff(s) <= 0):
        raise GeometryError("degenerate spline: arc-length table not increasing")
    # Repeated points share the parameter of the first copy.
    idx = np.searchsorted(keep, np.arange(len(P)), side="right") - 1
    data_u = x[idx]
    return SplineCurve(spline, u, s, data_u)


# ---------------------------------------------------------------------------
# curvature, torsion, frames


def _kappa_tau(d1, d2, d3):
    cross = np.cross(d1, d2)
    c2 = np.sum(cross * cross, axis=-1)
    speed = np.linalg.norm(d1, axis=-1)
    kappa = np.sqrt(c2) / speed ** 3
    degenerate = c2 < CROSS_EPS
    tau = np.where(degenerate, 0.0, np.sum(cross * d3, axis=-1) / np.where(degenerate, 1.0, c2))
    return kappa, tau, degenerate


def curvature_torsion_at(curve, s):
    """(kappa, tau, degenerate) at arc length ``s``; scalar or array input."""
    s_arr = np.asarray(s, dtype=np.float64)
    if np.any(s_arr < -1e-12) or np.any(s_arr > curve.length * (1 + 1e-12)):
        raise GeometryError(f"arc position outside [0, {curve.length}]")
    u = curve.u_at(np.clip(s_arr, 0.0, curve.length))
    kappa, tau, deg = _kappa_tau(*curve.derivatives(u))
    if s_arr.ndim == 0:
        return float(kappa), float(tau), bool(deg)
    return kappa, tau, deg


def frenet_frame(d1, d2):
    """(t, n, b) from first and second derivatives; None when the frame is undefined."""
    speed = np.linalg.norm(d1)
    cross = np.cross(d1, d2)
    cn = np.linalg.norm(cross)
    if speed == 0 or cn * cn < CROSS_EPS:
        return None
    t = d1 / speed
    b = cross / cn
    n = np.cross(b, t)
    return t, n / np.linalg.norm(n), b


def segment_curve(curve, segment_count=10, overlap=0.5, samples=16, trim=0.1):
    """Equal-length overlapping arc segments with frames and mean kappa/tau.

    Segments tile the arc interval left after trimming ``trim`` of the
    length at each end.
    """
    if segment_count < 2:
        raise GeometryError("segment_count must be >= 2")
    if not 0.0 <= overlap <= 0.9:
        raise GeometryError("overlap must lie in [0, 0.9]")
    length = curve.length
    a = trim * length
    span = length - 2 * a
    if span <= 1e-12:
        raise GeometryError("curve shorter than numerical resolution")
    sigma = span / segment_count
    step = sigma * (1.0 - overlap)
    count = int(np.floor((span - sigma) / step + 1e-9)) + 1
    frames = []
    for i in range(count):
        s0 = a + i * step
        s1 = s0 + sigma
        sq = s0 + (np.arange(samples) + 0.5) * sigma / samples
        kappa, tau, _ = _kappa_tau(*curve.derivatives(curve.u_at(sq)))
        k_mean = float(kappa.mean())
        t_mean = float(tau.mean())
        sm = 0.5 * (s0 + s1)
        um = curve.u_at(sm)
        d1, d2, _ = curve.derivatives(np.array([um]))
        frame = frenet_frame(d1[0], d2[0])
        valid = frame is not None and k_mean >= KAPPA_MIN
        if frame is None:
            frame = (np.full(3, np.nan),) * 3
        frames.append(
            SegmentFrame(s0, s1, curve.spline(um), frame[0], frame[1], frame[2], k_mean, t_mean, valid)
        )
    return frames


def binormal_weights(segments):
    return np.array([1.0 / (s.kappa ** 2) for s in segments if s.valid])


def mean_binormal(segments):
    """Sign-aligned sum of segment binormals weighted by 1/kappa**2, normalized."""
    valid = [s for s in segments if s.valid]
    if not valid:
        raise GeometryError("plane undefined: no curved segment")
    total = np.zeros(3)
    for seg in valid:
        b = np.asarray(seg.b, dtype=np.float64)
        ref = total if np.any(total) else b
        if b @ ref < 0:
            b = -b
        total += b / seg.kappa ** 2
    norm = np.linalg.norm(total)
    if norm == 0 or not np.isfinite(norm):
        raise GeometryError("plane undefined: binormals cancel")
    return total / norm


def fit_plane_svd(points):
    """Unit normal of the least-squares plane through ``points`` (3-D)."""
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(P) < 3:
        raise GeometryError("need at least 3 points for a plane")
    P = P[:, :3] if P.shape[1] >= 3 else np.hstack([P, np.zeros((len(P), 3 - P.shape[1]))])
    Pc = P - P.mean(axis=0)
    _, sv, vt = np.linalg.svd(Pc, full_matrices=False)
    if sv[0] == 0 or sv[1] <= 1e-10 * sv[0]:
        raise GeometryError("degenerate point set: collinear or coincident")
    normal = vt[-1]
    return normal / np.linalg.norm(normal)


def local_tuples(curve, points):
    """Tangent, kappa, tau at each original trajectory point."""
    u = curve.data_u
    d1, d2, d3 = curve.derivatives(u)
    kappa, tau, _ = _kappa_tau(d1, d2, d3)
    speed = np.linalg.norm(d1, axis=1, keepdims=True)
    tangents = np.divide(d1, speed, out=np.zeros_like(d1), where=speed > 0)
    return LocalTuples(np.asarray(points, dtype=np.float64), tangents, kappa, tau)


def cloud_signature(points, cfg=GeometryConfig(), label=None, with_local=False):
    """Assemble the cloud tuple (segments, mean binormal, centroid, radius).

    Straight, static or too-short trajectories produce a signature with no
    plane (``mean_binormal`` None) instead of raising.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if len(P) == 0:
        raise GeometryError("empty trajectory")
    centroid = P.mean(axis=0)
    radius = float(np.linalg.norm(P - centroid, axis=1).mean())
    segments = []
    binormal = None
    local = None
    try:
        curve = fit_spline(P, cfg.dims, cfg.smoothing)
        segments = segment_curve(curve, cfg.segments, cfg.overlap, cfg.samples, cfg.trim)
        binormal = mean_binormal(segments)
        if with_local:
            local = local_tuples(curve, P)
    except GeometryError:
        pass
    if with_local and local is None:
        local = LocalTuples(P, np.zeros((len(P), 3)), np.zeros(len(P)), np.zeros(len(P)))
    return CloudSignature(segments, binormal, centroid, radius, len(P), label, local)


# ---------------------------------------------------------------------------
# serialization / export


def _fl(x):
    return float(f"{float(x):.9g}")


def _vec(v):
    if v is None:
        return None
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        return None
    return [_fl(x) for x in v]


def signature_to_dict(sig):
    return {
        "centroid": _vec(sig.centroid),
        "radius": _fl(sig.radius),
        "binormal": _vec(sig.mean_binormal),
        "point_count": int(sig.point_count),
        "segments": [
            {
                "s": [_fl(seg.s_start), _fl(seg.s_end)],
                "t": _vec(seg.t),
                "n": _vec(seg.n),
                "b": _vec(seg.b),
                "kappa": _fl(seg.kappa),
                "tau": _fl(seg.tau),
                "valid": bool(seg.valid),
            }
            for seg in sig.segments
        ],
    }


def signature_from_dict(d, label=None):
    def arr(v):
        return np.full(3, np.nan) if v is None else np.asarray(v, dtype=np.float64)

    segments = [
        SegmentFrame(
            float(s["s"][0]), float(s["s"][1]), None, arr(s["t"]), arr(s["n"]), arr(s["b"]),
            float(s["kappa"]), float(s["tau"]), bool(s["valid"]),
        )
        for s in d.get("segments", [])
    ]
    b = d.get("binormal")
    return CloudSignature(
        segments,
        None if b is None else np.asarray(b, dtype=np.float64),
        np.asarray(d["centroid"], dtype=np.float64),
        float(d["radius"]),
        int(d.get("point_count", 0)),
        label,
    )


def export_trajectory_csv(path, traj):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"y{i + 1}" for i in range(traj.points.shape[1])])
        for f, row in zip(traj.frame_index, traj.points):
            w.writerow([int(f)] + [f"{x:.9g}" for x in row])


def export_signature_json(path, sig):
    with open(path, "w") as fh:
        json.dump(signature_to_dict(sig), fh, indent=2)
