"""End-to-end glue: templates -> features -> eigenspace -> cloud signatures.

``ActionModel`` bundles everything a query needs: the eigenspace, the
labelled training clouds, the distance scale used for similarity
percentages and the rest point used to flag null (motionless) windows.
"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import eigenspace, geometry
from .classifier import AlphaParams, FuzzyContext, FuzzyParams, MetricParams, classify_cloud, cloud_distance
from .eigenspace import Trajectory
from .geometry import GeometryConfig, LocalTuples
from .templates import FlowConfig, sequence_templates

log = logging.getLogger(__name__)

MIN_TRAJECTORY_POINTS = 5


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    flow: FlowConfig = field(default_factory=FlowConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    metric: MetricParams = field(default_factory=MetricParams)
    downsample: int = 4
    train_stride: int = 1
    null_threshold: float = 0.15

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        m = d.get("metric", {})
        metric = MetricParams(
            alpha=AlphaParams(**m.get("alpha", {})),
            rho=m.get("rho", 0.0),
            fuzzy=FuzzyParams(**m.get("fuzzy", {})),
            normalize_by_radii=m.get("normalize_by_radii", True),
        )
        return cls(
            flow=FlowConfig(**d.get("flow", {})),
            geometry=GeometryConfig(**d.get("geometry", {})),
            metric=metric,
            downsample=d.get("downsample", 4),
            train_stride=d.get("train_stride", 1),
            null_threshold=d.get("null_threshold", 0.15),
        )


def features(templates, downsample=4):
    """Block-average templates by ``downsample`` and flatten: (n, D) float64."""
    t = np.asarray(templates, dtype=np.float64)
    if t.ndim == 2:
        t = t[None]
    if downsample > 1:
        n, h, w = t.shape
        h2, w2 = h // downsample, w // downsample
        t = t[:, :h2 * downsample, :w2 * downsample]
        t = t.reshape(n, h2, downsample, w2, downsample).mean(axis=(2, 4))
    return t.reshape(len(t), -1)


@dataclass
class ActionModel:
    eigen: eigenspace.EigenModel
    config: PipelineConfig
    clouds: list
    d0: float
    rest_point: np.ndarray
    rest_scale: float
    fuzzy_context: FuzzyContext = None

    @property
    def classes(self):
        return sorted({str(c.label) for c in self.clouds})

    def trajectory(self, templates, frame_index=None):
        return Trajectory(
            eigenspace.project_many(self.eigen, features(templates, self.config.downsample)),
            frame_index,
        )

    def signature(self, points, label=None, with_local=False):
        return geometry.cloud_signature(points, self.config.geometry, label, with_local)

    def is_null(self, sig):
        bound = self.config.null_threshold * self.rest_scale
        offset = np.linalg.norm(np.asarray(sig.centroid) - self.rest_point)
        return bool(offset < bound and sig.radius < bound)

    def classify(self, sig, metric=None):
        metric = metric or self.config.metric
        return classify_cloud(sig, self.clouds, metric, self.fuzzy_context)

    def similarity(self, d):
        return 100.0 * float(np.exp(-d / self.d0))

    def knn_reference(self):
        pts = [c.local.points for c in self.clouds if c.local is not None]
        labels = [str(c.label) for c in self.clouds if c.local is not None for _ in c.local.points]
        return np.vstack(pts), labels


def _d0(clouds, metric):
    ds = []
    fallback = []
    for i in range(len(clouds)):
        for j in range(i + 1, len(clouds)):
            d = cloud_distance(clouds[i], clouds[j], MetricParams(metric.alpha, 0.0, metric.fuzzy,
                                                                    metric.normalize_by_radii)).total
            (ds if clouds[i].label != clouds[j].label else fallback).append(d)
    vals = ds or fallback
    d0 = float(np.median(vals)) if vals else 1.0
    return d0 if d0 > 0 else 1.0


def train_model(clips, kernel="poly", degree=2, offset=1.0, K=eigenspace.DEFAULT_K,
                config=PipelineConfig(), degree_range=eigenspace.DEFAULT_DEGREES):
    """Train from ``clips``: iterable of ``(label, clip_id, data)``.

    ``data`` is either a template stack (n, h, w) or an already computed
    feature matrix (n, D) from :func:`features`. ``degree="auto"`` sweeps
    ``degree_range`` for the best class separation.
    """
    clips = list(clips)
    if not clips:
        raise PipelineError("no training clips")
    feats = [t if np.ndim(t) == 2 else features(t, config.downsample) for _, _, t in clips]
    stride = max(1, config.train_stride)
    vecs, labels, ids = [], [], []
    for (label, cid, _), f in zip(clips, feats):
        sub = f[::stride]
        vecs.append(sub)
        labels += [str(label)] * len(sub)
        ids += [cid] * len(sub)
    data = eigenspace.TrainingSet(np.vstack(vecs), labels, ids)
    K = min(K, data.total)
    curve = None
    if kernel == "linear":
        model = eigenspace.train_pca(data, K)
    elif kernel == "poly":
        if degree == "auto":
            degree, curve = eigenspace.tune_kernel_degree(data, K, degree_range, offset)
            log.info("selected kernel degree %d from %s", degree, curve)
        model = eigenspace.train_kpca(data, K, int(degree), offset)
    else:
        raise PipelineError(f"unknown kernel {kernel!r}")
    clouds = []
    for (label, cid, _), f in zip(clips, feats):
        pts = eigenspace.project_many(model, f)
        sig = geometry.cloud_signature(pts, config.geometry, str(label), with_local=True)
        sig.clip_id = str(cid)
        clouds.append(sig)
    rest = eigenspace.project_many(model, np.zeros((1, model.dim)))[0]
    offsets = [np.linalg.norm(c.centroid - rest) for c in clouds]
    rest_scale = float(np.median(offsets)) if offsets else 1.0
    am = ActionModel(model, config, clouds, _d0(clouds, config.metric), rest,
                     rest_scale if rest_scale > 0 else 1.0)
    am.fuzzy_context = FuzzyContext.from_signatures(clouds)
    am.degree_curve = curve
    return am


def clip_signature(model, frames_or_templates, is_templates=False, with_local=None):
    """Trajectory and signature of a clip (frames array/FrameSequence or templates)."""
    if is_templates:
        templates = np.asarray(frames_or_templates)
    else:
        templates = sequence_templates(frames_or_templates, model.config.flow)
    traj = model.trajectory(templates)
    if len(traj) < MIN_TRAJECTORY_POINTS:
        raise PipelineError(
            f"clip too short: {len(traj)} trajectory points, need >= {MIN_TRAJECTORY_POINTS}"
        )
    if with_local is None:
        with_local = model.config.metric.rho > 0
    return traj, model.signature(traj.points, with_local=with_local)


# ---------------------------------------------------------------------------
# persistence


def save_action_model(model, directory):
    os.makedirs(directory, exist_ok=True)
    extra = {
        "pipeline": model.config.to_dict(),
        "d0": model.d0,
        "rest_point": [float(x) for x in model.rest_point],
        "rest_scale": model.rest_scale,
        "classes": model.classes,
    }
    eigenspace.save_model(model.eigen, directory, extra)
    tmp = os.path.join(directory, "clouds.jsonl.tmp")
    with open(tmp, "w") as fh:
        for c in model.clouds:
            rec = {"label": c.label, "clip_id": getattr(c, "clip_id", ""),
                   "signature": geometry.signature_to_dict(c)}
            if c.local is not None:
                rec["local"] = {
                    "points": np.round(c.local.points, 9).tolist(),
                    "tangents": np.round(c.local.tangents, 9).tolist(),
                    "kappa": np.round(c.local.kappa, 9).tolist(),
                    "tau": np.round(c.local.tau, 9).tolist(),
                }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    os.replace(tmp, os.path.join(directory, "clouds.jsonl"))


def load_action_model(directory):
    eigen, manifest = eigenspace.load_model(directory)
    if "pipeline" not in manifest:
        raise PipelineError(f"{directory}: manifest lacks pipeline settings")
    clouds = []
    path = os.path.join(directory, "clouds.jsonl")
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise PipelineError(f"{path}:{lineno}: malformed line: {exc}") from exc
                sig = geometry.signature_from_dict(rec["signature"], rec["label"])
                sig.clip_id = rec.get("clip_id", "")
                loc = rec.get("local")
                if loc:
                    sig.local = LocalTuples(*(np.asarray(loc[k], dtype=np.float64)
                                              for k in ("points", "tangents", "kappa", "tau")))
                clouds.append(sig)
    except OSError as exc:
        raise PipelineError(f"cannot read {path}: {exc}") from exc
    model = ActionModel(
        eigen,
        PipelineConfig.from_dict(manifest["pipeline"]),
        clouds,
        float(manifest["d0"]),
        np.asarray(manifest["rest_point"], dtype=np.float64),
        float(manifest["rest_scale"]),
    )
    if any(c.local is not None for c in clouds):
        model.fuzzy_context = FuzzyContext.from_signatures(clouds)
    return model
