"""Evaluation on the synthetic action set.

Confusion matrices, the cloud-classifier vs point-KNN comparison under
leave-one-clip-per-class-out folds, eigenspace separation reports and
kinematic checks of the generator.
"""
import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import eigenspace
from .classifier import baseline_knn
from .pipeline import PipelineConfig, features, train_model
from .templates import FlowConfig, FrameSequence, dense_flow, sequence_templates

log = logging.getLogger(__name__)


class EvalError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    classes: list
    counts: np.ndarray

    @property
    def percent(self):
        rows = self.counts.sum(axis=1, keepdims=True)
        return 100.0 * self.counts / rows

    @property
    def accuracy(self):
        return float(np.trace(self.counts) / self.counts.sum())

    def row_sums(self):
        return self.percent.sum(axis=1)

    def to_dict(self):
        return {
            "classes": list(self.classes),
            "percent": np.round(self.percent, 1).tolist(),
            "accuracy": self.accuracy,
        }


def confusion_matrix(predictions, truths, classes):
    """Rows are true classes, columns predictions; ``percent`` is row-normalized."""
    predictions = [str(p) for p in predictions]
    truths = [str(t) for t in truths]
    classes = [str(c) for c in classes]
    if len(predictions) != len(truths):
        raise EvalError(f"{len(predictions)} predictions for {len(truths)} truths")
    pos = {c: i for i, c in enumerate(classes)}
    unknown = sorted(set(predictions + truths) - set(pos))
    if unknown:
        raise EvalError(f"unknown labels: {unknown}")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(predictions, truths):
        counts[pos[t], pos[p]] += 1
    empty = [c for c in classes if counts[pos[c]].sum() == 0]
    if empty:
        raise EvalError(f"no ground-truth samples for classes: {empty}")
    return ConfusionMatrix(classes, counts)


@dataclass
class Comparison:
    tpc: ConfusionMatrix
    knn: ConfusionMatrix
    rows: list  # (clip_id, truth, tpc prediction, knn prediction)

    @property
    def tpc_accuracy(self):
        return self.tpc.accuracy

    @property
    def knn_accuracy(self):
        return self.knn.accuracy


def clip_features(clips, config=PipelineConfig()):
    """``(label, clip_id, features)`` for clips with a ``frames`` attribute."""
    out = []
    for c in clips:
        t = sequence_templates(FrameSequence(c.frames, name=c.clip_id), config.flow)
        out.append((c.label, c.clip_id, features(t, config.downsample)))
    return out


def leave_one_out_folds(items):
    """Fold j holds out the j-th clip of every class."""
    per_class = defaultdict(list)
    for i, (label, _, _) in enumerate(items):
        per_class[str(label)].append(i)
    n = max(len(v) for v in per_class.values())
    folds = []
    for j in range(n):
        test = [v[j] for v in per_class.values() if j < len(v)]
        folds.append((sorted(set(range(len(items))) - set(test)), test))
    return folds


def compare_classifiers(items, kernel="poly", degree=2, offset=1.0, K=eigenspace.DEFAULT_K,
                        config=PipelineConfig(), knn_k=7, protocol="leave-one-out"):
    """Cloud classifier vs point KNN on identical splits.

    ``items`` are ``(label, clip_id, templates or features)``. With
    ``protocol="resubstitution"`` every clip is both trained on and queried.
    """
    items = list(items)
    if not items:
        raise EvalError("empty dataset")
    if protocol == "leave-one-out":
        folds = leave_one_out_folds(items)
    elif protocol == "resubstitution":
        folds = [(list(range(len(items))), list(range(len(items))))]
    else:
        raise EvalError(f"unknown protocol {protocol!r}")
    feats = [(l, c, f if np.ndim(f) == 2 else features(f, config.downsample)) for l, c, f in items]
    classes = sorted({str(l) for l, _, _ in feats})
    rows = []
    for k, (train, test) in enumerate(folds):
        model = train_model([feats[i] for i in train], kernel, degree, offset, K, config)
        ref, labels = model.knn_reference()
        kk = min(knn_k, len(ref))
        for i in test:
            label, cid, f = feats[i]
            pts = eigenspace.project_many(model.eigen, f)
            pred, _ = model.classify(model.signature(pts, with_local=config.metric.rho > 0))
            kpred, _ = baseline_knn(pts, ref, labels, kk)
            rows.append((cid, str(label), pred, kpred))
        log.info("fold %d/%d done", k + 1, len(folds))
    truths = [r[1] for r in rows]
    return Comparison(
        confusion_matrix([r[2] for r in rows], truths, classes),
        confusion_matrix([r[3] for r in rows], truths, classes),
        rows,
    )


# ---------------------------------------------------------------------------
# eigenspace separation


@dataclass
class SeparationReport:
    linear_max: float
    kernel_max: float
    ratio: float
    factor: float


def _class_distance_sums(points, labels):
    labels = np.asarray([str(l) for l in labels])
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise EvalError("separation needs at least two classes")
    cents = np.array([points[labels == c].mean(axis=0) for c in classes])
    d = np.linalg.norm(cents[:, None, :] - cents[None, :, :], axis=2)
    return d.sum(axis=1)


def separation_from_points(linear_points, kernel_points, labels):
    """Per-class summed inter-class distances in each space, compared by their maxima."""
    lin = np.asarray(linear_points, dtype=np.float64)
    ker = np.asarray(kernel_points, dtype=np.float64)
    if len(lin) != len(labels) or len(ker) != len(labels):
        raise EvalError("points and labels differ in length")
    lmax = float(_class_distance_sums(lin, labels).max())
    kmax = float(_class_distance_sums(ker, labels).max())
    if lmax <= 0:
        raise EvalError("linear space has no class separation")
    r = kmax / lmax
    return SeparationReport(lmax, kmax, r, r if kmax > lmax else 1.0 / r)


def separation_report(linear_model, kernel_model, data):
    """Compare class separation of two eigenspaces trained on ``data``."""
    return separation_from_points(
        eigenspace.project_many(linear_model, data.vectors),
        eigenspace.project_many(kernel_model, data.vectors),
        data.labels,
    )


# ---------------------------------------------------------------------------
# generator kinematics


def flow_statistics(frames, cfg=FlowConfig(), step=4):
    """Mean flow magnitude and mean |u|, |v| over moving nodes, sampled every ``step`` pairs."""
    mags, us, vs = [], [], []
    for i in range(0, len(frames) - 1, step):
        f = dense_flow(frames[i], frames[i + 1], cfg)
        m = f.magnitude()
        moving = m > 0.5
        if moving.any():
            mags.append(m[moving].mean())
            us.append(np.abs(f.u[moving]).mean())
            vs.append(np.abs(f.v[moving]).mean())
    if not mags:
        return 0.0, 0.0, 0.0
    return float(np.mean(mags)), float(np.mean(us)), float(np.mean(vs))


def dominant_axis(frames, cfg=FlowConfig(), step=4):
    """0 for horizontal, 1 for vertical dominant motion."""
    _, u, v = flow_statistics(frames, cfg, step)
    return 0 if u >= v else 1
