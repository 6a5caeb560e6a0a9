"""Sliding-window timeline index and query-by-clip retrieval.

A long video is cut into windows of ``window`` frames every ``stride``
frames. Each window is reduced to a cloud signature, scored against the
trained clouds and stored as one JSON line. Queries compare a clip's
signature with every stored (non-null) window.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import eigenspace, geometry
from .classifier import MetricParams, cloud_distance, fuzzy_memberships
from .geometry import _fl
from .pipeline import PipelineError, clip_signature, features
from .templates import FrameSequence, sequence_templates

INDEX_FORMAT = "mcidx"
INDEX_VERSION = 1


class IndexFileError(ValueError):
    pass


@dataclass(frozen=True)
class IndexerConfig:
    window: int = 250
    stride: int = 50
    null_threshold: float = None  # None: use the model's setting

    def __post_init__(self):
        if self.stride < 1 or self.window <= self.stride:
            raise ValueError(f"need window > stride >= 1, got window={self.window} stride={self.stride}")


@dataclass
class IndexRecord:
    video_id: str
    start_frame: int
    end_frame: int
    signature: geometry.CloudSignature = field(repr=False)
    scores: dict
    similarity: dict
    predicted_class: str = None
    null: bool = False


@dataclass
class QueryHit:
    video_id: str
    start_frame: int
    end_frame: int
    similarity: float
    distance: float
    predicted_class: str = None


@dataclass
class QueryResult:
    hits: list
    null_query: bool = False


@dataclass
class BinaryCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def tpr(self):
        d = self.tp + self.fn
        return self.tp / d if d else float("nan")

    @property
    def tnr(self):
        d = self.tn + self.fp
        return self.tn / d if d else float("nan")


def window_bounds(n_frames, cfg=IndexerConfig()):
    """Frame ranges ``[start, end)`` of every window."""
    if n_frames < 2:
        raise IndexFileError("video needs at least 2 frames")
    if n_frames < cfg.window:
        return [(0, n_frames)]
    return [(s, s + cfg.window) for s in range(0, n_frames - cfg.window + 1, cfg.stride)]


def _null(model, sig, threshold):
    bound = threshold * model.rest_scale
    offset = np.linalg.norm(np.asarray(sig.centroid) - model.rest_point)
    return bool(offset < bound and sig.radius < bound)


def index_timeline(video, model, cfg=IndexerConfig(), video_id=None):
    """Index one video (FrameSequence or (n, h, w) array)."""
    if not isinstance(video, FrameSequence):
        video = FrameSequence(np.asarray(video))
    vid = video_id if video_id is not None else (video.name or "video")
    # templates are computed once; template i links frames i and i+1
    points = eigenspace.project_many(
        model.eigen, features(sequence_templates(video, model.config.flow), model.config.downsample)
    )
    threshold = cfg.null_threshold if cfg.null_threshold is not None else model.config.null_threshold
    m = model.config.metric
    plain = MetricParams(m.alpha, 0.0, m.fuzzy, m.normalize_by_radii)  # stored scores carry no fuzzy term
    records = []
    for start, end in window_bounds(len(video), cfg):
        sig = model.signature(points[start:end - 1])
        null = _null(model, sig, threshold)
        cls, scores = model.classify(sig, plain)
        sims = {c: model.similarity(d) for c, d in scores.items()}
        sig.label = None if null else cls
        records.append(IndexRecord(str(vid), start, end, sig, scores, sims,
                                   None if null else cls, null))
    return records


# ---------------------------------------------------------------------------
# persistence


def record_to_dict(rec):
    d = {
        "video_id": rec.video_id,
        "start_frame": int(rec.start_frame),
        "end_frame": int(rec.end_frame),
        "scores": {k: _fl(v) for k, v in sorted(rec.scores.items())},
        "similarity": {k: _fl(v) for k, v in sorted(rec.similarity.items())},
        "predicted_class": rec.predicted_class,
        "null": bool(rec.null),
    }
    d.update(geometry.signature_to_dict(rec.signature))
    return d


def record_from_dict(d):
    sig = geometry.signature_from_dict(d, d.get("predicted_class"))
    return IndexRecord(
        str(d["video_id"]), int(d["start_frame"]), int(d["end_frame"]), sig,
        {k: float(v) for k, v in d["scores"].items()},
        {k: float(v) for k, v in d.get("similarity", {}).items()},
        d.get("predicted_class"), bool(d["null"]),
    )


def save_index(records, path, K=None):
    """Write records as JSON Lines behind a header line; atomic replace."""
    records = list(records)
    if K is None:
        K = len(records[0].signature.centroid) if records else 0
    header = {"format": INDEX_FORMAT, "version": INDEX_VERSION, "K": int(K), "count": len(records)}
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")
    os.replace(tmp, path)


def load_index(path, with_header=False):
    try:
        with open(path) as fh:
            lines = fh.read().split("\n")
    except OSError as exc:
        raise IndexFileError(f"cannot read index {path}: {exc}") from exc
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise IndexFileError(f"{path}:1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise IndexFileError(f"{path}:1: malformed header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != INDEX_FORMAT:
        raise IndexFileError(f"{path}:1: not an index file")
    if header.get("version") != INDEX_VERSION:
        raise IndexFileError(f"{path}:1: unsupported index version {header.get('version')!r}")
    records = []
    for lineno, line in enumerate(lines[1:], 2):
        try:
            records.append(record_from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise IndexFileError(f"{path}:{lineno}: malformed record: {exc}") from exc
    count = header.get("count")
    if count is not None and count != len(records):
        raise IndexFileError(f"{path}:{len(lines) + 1}: truncated index, expected {count} records, "
                             f"found {len(records)}")
    return (header, records) if with_header else records


# ---------------------------------------------------------------------------
# queries


def query_similarity(clip, model, records, top_k=10, rho=None, is_templates=False):
    """Rank stored windows by similarity to ``clip``."""
    if not records:
        raise IndexFileError("empty index")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    m = model.config.metric
    metric = MetricParams(m.alpha, m.rho if rho is None else float(rho), m.fuzzy, m.normalize_by_radii)
    _, sig = clip_signature(model, clip, is_templates, with_local=metric.rho > 0)
    if model.is_null(sig):
        return QueryResult([], True)
    if len(records[0].signature.centroid) != len(sig.centroid):
        raise IndexFileError("index and model dimensions differ")
    memberships = None
    if metric.rho > 0 and model.fuzzy_context is not None:
        memberships = fuzzy_memberships(sig.local, model.fuzzy_context, metric.fuzzy)
    hits = []
    for rec in records:
        if rec.null:
            continue
        d = cloud_distance(sig, rec.signature, metric, fuzzy_class=rec.predicted_class,
                           memberships=memberships).total
        hits.append(QueryHit(rec.video_id, rec.start_frame, rec.end_frame,
                             model.similarity(d), d, rec.predicted_class))
    hits.sort(key=lambda h: (h.distance, h.video_id, h.start_frame))
    return QueryResult(hits[:top_k], False)


# ---------------------------------------------------------------------------
# timeline annotation scoring


def _check_intervals(intervals):
    ivs = sorted((int(s), int(e), str(c)) for s, e, c in intervals)
    for i, (s, e, c) in enumerate(ivs):
        if e <= s:
            raise ValueError(f"empty ground-truth interval [{s}, {e})")
        for s2, e2, c2 in ivs[i + 1:]:
            if s2 >= e:
                break
            if c2 != c:
                raise ValueError(f"contradictory ground truth: [{s},{e}) {c} overlaps [{s2},{e2}) {c2}")
    return ivs


def _covered(start, end, ivs, cls):
    hit = sum(max(0, min(end, e) - max(start, s)) for s, e, c in ivs if c == cls)
    return hit >= 0.5 * (end - start)


def annotate_intervals(records, intervals, classes=None):
    """One-vs-rest TP/TN/FP/FN per class over indexed windows.

    ``intervals`` is a list of ``(start, end, label)`` for a single video or
    a dict ``video_id -> list``. A window matches class c when at least half
    of it lies inside ground-truth c intervals.
    """
    if isinstance(intervals, dict):
        by_video = {k: _check_intervals(v) for k, v in intervals.items()}
    else:
        ivs = _check_intervals(intervals)
        by_video = None
    if classes is None:
        labels = {c for v in (by_video.values() if by_video else [ivs]) for _, _, c in v}
        labels |= {r.predicted_class for r in records if r.predicted_class is not None}
        labels.discard("null")
        classes = sorted(labels)
    counts = {c: BinaryCounts() for c in classes}
    for rec in records:
        gt = by_video.get(rec.video_id, []) if by_video is not None else ivs
        pred = None if rec.null else rec.predicted_class
        for c in classes:
            cov = _covered(rec.start_frame, rec.end_frame, gt, c)
            k = counts[c]
            if pred == c:
                if cov:
                    k.tp += 1
                else:
                    k.fp += 1
            elif cov:
                k.fn += 1
            else:
                k.tn += 1
    return counts


__all__ = [
    "IndexerConfig", "IndexRecord", "QueryHit", "QueryResult", "BinaryCounts", "IndexFileError",
    "PipelineError", "window_bounds", "index_timeline", "save_index", "load_index",
    "record_to_dict", "record_from_dict", "query_similarity", "annotate_intervals",
]
