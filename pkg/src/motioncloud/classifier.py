"""Trajectory point cloud distance, cloud classification and KNN baseline.

The cloud distance adds three terms:

* the centroid separation, normalized by the summed mean radii,
* the angle between the mean osculating planes, modulated by ``alpha``
  (zero for coincident clouds, peaking near a fraction of a radius,
  decaying exponentially beyond),
* an optional fuzzy nearest-neighbour penalty comparing local frames.
"""
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaParams:
    beta: float = 1.0
    lambda1: float = 2.5
    lambda2: float = 25.0
    variant: str = "peaked"

    def __post_init__(self):
        if self.beta <= 0 or self.lambda1 <= 0 or self.lambda2 <= 0:
            raise ValueError("beta, lambda1 and lambda2 must be positive")
        if self.variant not in ("peaked", "literal"):
            raise ValueError(f"unknown alpha variant {self.variant!r}")


@dataclass(frozen=True)
class FuzzyParams:
    k_neighbors: int = 7
    m: float = 2.0
    eps: float = 1e-9

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        if self.m <= 1:
            raise ValueError("fuzzifier m must be > 1")


@dataclass(frozen=True)
class MetricParams:
    alpha: AlphaParams = field(default_factory=AlphaParams)
    rho: float = 0.0
    fuzzy: FuzzyParams = field(default_factory=FuzzyParams)
    normalize_by_radii: bool = True

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")


@dataclass
class DistanceBreakdown:
    delta_c: float
    theta: float
    alpha: float
    fuzzy: float
    rho: float = 0.0

    @property
    def plane_term(self):
        return self.alpha * self.theta

    @property
    def total(self):
        return self.delta_c + self.alpha * self.theta + self.rho * self.fuzzy


@dataclass
class FuzzyContext:
    """Labelled training points with their local tuples (tangent, kappa, tau)."""

    points: np.ndarray
    labels: np.ndarray
    tangents: np.ndarray
    kappa: np.ndarray
    tau: np.ndarray

    @classmethod
    def from_signatures(cls, signatures):
        parts = [s for s in signatures if s.local is not None and len(s.local.points)]
        if not parts:
            raise ClassifierError("no local tuples available for the fuzzy context")
        return cls(
            np.vstack([s.local.points for s in parts]),
            np.concatenate([[str(s.label)] * len(s.local.points) for s in parts]),
            np.vstack([s.local.tangents for s in parts]),
            np.concatenate([s.local.kappa for s in parts]),
            np.concatenate([s.local.tau for s in parts]),
        )

    def __len__(self):
        return len(self.points)


def alpha(delta_c, p=AlphaParams()):
    """Plane-term modulation as a function of (normalized) centroid separation."""
    x = np.asarray(delta_c, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("separation must be non-negative")
    env = p.beta * np.exp(-p.lambda1 * x)
    rise = -np.expm1(-p.lambda2 * x)
    if p.variant == "peaked":
        out = env * rise
    else:
        small = x < 1e-12
        safe = np.where(small, 1.0, x)
        out = np.where(small, p.beta * p.lambda2, env * rise / safe)
    return float(out) if out.ndim == 0 else out


def alpha_peak(p=AlphaParams()):
    """Closed-form argmax of the peaked variant."""
    return np.log((p.lambda1 + p.lambda2) / p.lambda1) / p.lambda2


def plane_angle(b1, b2):
    if b1 is None or b2 is None:
        return 0.0
    dot = abs(float(np.dot(b1, b2)))
    return float(np.arccos(min(max(dot, 0.0), 1.0)))


def _affinity(tp, tq, kp, kq, sp, sq, eps):
    align = 0.5 * (1.0 + np.abs(np.sum(tp * tq, axis=-1)))
    curv = np.exp(-np.abs(kp - kq) / (kp + kq + eps))
    tors = np.exp(-np.abs(sp - sq) / (np.abs(sp) + np.abs(sq) + eps))
    return align * curv * tors


def fuzzy_memberships(local, context, p=FuzzyParams()):
    """Mean fuzzy membership of the query points in each training class."""
    if context is None or len(context) == 0:
        raise ClassifierError("empty training set for fuzzy penalty")
    q = np.asarray(local.points, dtype=np.float64)
    if q.shape[1] != context.points.shape[1]:
        raise ClassifierError("query and training points differ in dimension")
    k = min(p.k_neighbors, len(context))
    idx, sq = kernels.knn(q, context.points, k)
    dist = np.sqrt(sq)
    g = _affinity(
        local.tangents[:, None, :], context.tangents[idx],
        local.kappa[:, None], context.kappa[idx],
        local.tau[:, None], context.tau[idx], p.eps,
    )
    w = g / (dist ** (2.0 / (p.m - 1.0)) + p.eps)
    wsum = w.sum(axis=1)
    labels = context.labels[idx]
    out = {}
    for c in np.unique(context.labels):
        u = np.where(labels == c, w, 0.0).sum(axis=1) / wsum
        out[str(c)] = float(u.mean())
    return out


def fuzzy_penalty(local, cls, context, p=FuzzyParams()):
    """1 - mean membership of the query points in class ``cls`` (in [0, 1])."""
    return 1.0 - fuzzy_memberships(local, context, p).get(str(cls), 0.0)


def cloud_distance(sig, other, p=MetricParams(), fuzzy_context=None, fuzzy_class=None,
                   memberships=None):
    """Distance between two cloud signatures, returned term by term.

    The fuzzy term is evaluated for the query ``sig`` against the class of
    ``other`` (or ``fuzzy_class``); pass precomputed ``memberships`` to
    avoid recomputing it for every candidate.
    """
    c1 = np.asarray(sig.centroid, dtype=np.float64)
    c2 = np.asarray(other.centroid, dtype=np.float64)
    if c1.shape != c2.shape:
        raise ClassifierError(f"centroid dimensions differ: {c1.shape} vs {c2.shape}")
    raw = float(np.linalg.norm(c1 - c2))
    spread = sig.radius + other.radius
    if p.normalize_by_radii and spread > 0:
        dc = raw / spread
    else:
        dc = raw
    theta = plane_angle(sig.mean_binormal, other.mean_binormal)
    a = alpha(dc, p.alpha)
    f = 0.0
    if p.rho > 0:
        cls = fuzzy_class if fuzzy_class is not None else other.label
        if memberships is not None:
            f = 1.0 - memberships.get(str(cls), 0.0)
        elif fuzzy_context is not None and sig.local is not None:
            f = fuzzy_penalty(sig.local, cls, fuzzy_context, p.fuzzy)
    return DistanceBreakdown(dc, theta, a, f, p.rho)


def classify_cloud(sig, clouds, p=MetricParams(), fuzzy_context=None):
    """Nearest labelled cloud under the cloud distance.

    Returns ``(predicted_class, {class: min distance})``; ties resolve to
    the lexicographically smallest class.
    """
    if not clouds:
        raise ClassifierError("empty model: no labelled clouds")
    memberships = None
    if p.rho > 0 and fuzzy_context is not None and sig.local is not None:
        memberships = fuzzy_memberships(sig.local, fuzzy_context, p.fuzzy)
    scores = {}
    for cloud in clouds:
        d = cloud_distance(sig, cloud, p, memberships=memberships).total
        key = str(cloud.label)
        if key not in scores or d < scores[key]:
            scores[key] = d
    best = min(scores, key=lambda c: (scores[c], c))
    return best, scores


def _vote(labels):
    counts = Counter(labels)
    top = max(counts.values())
    return min(c for c, n in counts.items() if n == top)


def baseline_knn(query_points, train_points, train_labels, K=7):
    """Per-point K-nearest-neighbour vote, then a majority over the clip.

    Returns ``(class, fraction of points voting for it)``.
    """
    q = np.atleast_2d(np.asarray(query_points, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(train_points, dtype=np.float64))
    labels = np.asarray([str(x) for x in train_labels])
    if len(q) == 0 or len(ref) == 0:
        raise ClassifierError("empty query or training set")
    if K < 1 or K > len(ref):
        raise ClassifierError(f"K={K} outside 1..{len(ref)}")
    idx, _ = kernels.knn(q, ref, K)
    per_point = [_vote(labels[row]) for row in idx]
    winner = _vote(per_point)
    return winner, per_point.count(winner) / len(per_point)
