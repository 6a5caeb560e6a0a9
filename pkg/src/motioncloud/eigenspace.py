"""Linear PCA and polynomial kernel PCA eigenspaces over flattened templates.

Both trainers solve an N_T x N_T eigenproblem (N_T = number of training
templates) instead of the D x D pixel covariance. For linear PCA the small
matrix is the Gram matrix of mean-subtracted samples and eigenvectors are
mapped back to pixel space; for kernel PCA the Gram matrix holds kernel
values and is double-centred.
"""
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import pdist

DEFAULT_K = 10
DEFAULT_DEGREES = tuple(range(1, 9))
# Eigenvalues below this fraction of the leading one count as zero.
RELATIVE_EIG_FLOOR = 1e-10

SIDECAR_MAGIC = b"MCEM"
SIDECAR_VERSION = 1


class EigenspaceError(ValueError):
    pass


@dataclass
class TrainingSet:
    """Row-stacked template vectors with class labels and clip ids."""

    vectors: np.ndarray
    labels: list
    clip_ids: list = None

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        self.labels = list(self.labels)
        if self.clip_ids is None:
            self.clip_ids = [""] * len(self.labels)
        self.clip_ids = list(self.clip_ids)
        if len(self.labels) != len(self.vectors) or len(self.clip_ids) != len(self.vectors):
            raise EigenspaceError("labels/clip ids must match the number of vectors")

    @property
    def total(self):
        return len(self.vectors)

    @property
    def dim(self):
        return self.vectors.shape[1]

    @property
    def classes(self):
        return sorted(set(self.labels))


@dataclass
class EigenModel:
    kind: str
    mean: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray = None
    degree: int = 1
    offset: float = 0.0
    scale: float = 1.0
    train_vectors: np.ndarray = None
    coeffs: np.ndarray = None
    gram_col_mean: np.ndarray = None
    gram_mean: float = 0.0
    train_projections: np.ndarray = field(default=None, repr=False)

    @property
    def K(self):
        return len(self.eigenvalues)

    @property
    def dim(self):
        return len(self.mean)

    @property
    def n_train(self):
        if self.kind == "linear":
            return 0 if self.train_projections is None else len(self.train_projections)
        return len(self.train_vectors)


@dataclass
class Trajectory:
    points: np.ndarray
    frame_index: np.ndarray = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.frame_index is None:
            self.frame_index = np.arange(len(self.points))
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]


def _as_vectors(data):
    if isinstance(data, TrainingSet):
        return data.vectors
    return np.atleast_2d(np.asarray(data, dtype=np.float64))


def _top_eigenpairs(mat, k, psd):
    """Top-``k`` eigenpairs of a symmetric matrix, ordered by decreasing |lambda|."""
    n = mat.shape[0]
    if psd:
        vals, vecs = linalg.eigh(mat, subset_by_index=[n - k, n - 1])
    else:
        vals, vecs = linalg.eigh(mat)
    order = np.argsort(-np.abs(vals), kind="stable")[:k]
    vals = vals[order]
    vecs = vecs[:, order]
    lead = np.abs(vals[0]) if len(vals) else 0.0
    vals = np.where(np.abs(vals) < RELATIVE_EIG_FLOOR * lead, 0.0, vals)
    return vals, vecs


def _fix_sign(vec):
    j = np.argmax(np.abs(vec))
    return -vec if vec[j] < 0 else vec


def _complete_basis(basis, dim):
    """Fill zero rows of ``basis`` with unit vectors orthogonal to the others."""
    rows = [b for b in basis if np.linalg.norm(b) > 0]
    missing = len(basis) - len(rows)
    j = 0
    while missing and j < dim:
        e = np.zeros(dim)
        e[j] = 1.0
        for r in rows:
            e -= (e @ r) * r
        norm = np.linalg.norm(e)
        if norm > 1e-8:
            rows.append(e / norm)
            missing -= 1
        j += 1
    return np.array(rows)


def _check(vectors, k):
    n = len(vectors)
    if k < 1:
        raise EigenspaceError("K must be >= 1")
    if k > n:
        raise EigenspaceError(f"K={k} exceeds the number of training samples N_T={n}")


def train_pca(data, K=DEFAULT_K):
    """Linear PCA via the small N_T x N_T Gram matrix of centred samples."""
    X = _as_vectors(data)
    _check(X, K)
    n, dim = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(np.abs(Xc) > 0):
        raise EigenspaceError("no variance: all training vectors are identical")
    vals, vecs = _top_eigenpairs(Xc @ Xc.T, K, psd=True)
    if vals[0] <= 0:
        raise EigenspaceError("no variance in training data")
    basis = np.zeros((K, dim))
    for i in range(K):
        if vals[i] > 0:
            u = Xc.T @ vecs[:, i]
            basis[i] = _fix_sign(u / np.linalg.norm(u))
    if np.any(vals <= 0):
        basis = _complete_basis(basis, dim)
        for i in range(K):
            basis[i] = _fix_sign(basis[i])
    model = EigenModel(kind="linear", mean=mean, eigenvalues=vals / n, basis=basis)
    model.train_projections = Xc @ basis.T
    return model


def train_kpca(data, K=DEFAULT_K, degree=2, offset=1.0, scale=None):
    """Polynomial kernel PCA with kernel ``(x.y + offset) ** degree``.

    Inputs are mean-subtracted and multiplied by ``scale`` before the kernel
    is applied (default: one over the largest centred sample norm, keeping
    Gram entries of order one). Projections are divided by ``scale`` so the
    degree-1, zero-offset model reproduces linear PCA coordinates.
    """
    X = _as_vectors(data)
    _check(X, K)
    if degree < 1:
        raise EigenspaceError("degree must be >= 1")
    n = len(X)
    mean = X.mean(axis=0)
    Xc = X - mean
    norms = np.sqrt((Xc * Xc).sum(axis=1))
    if norms.max() == 0:
        raise EigenspaceError("no variance: all training vectors are identical")
    if scale is None:
        scale = 1.0 / norms.max()
    Z = Xc * scale
    with np.errstate(over="ignore", invalid="ignore"):
        gram = (Z @ Z.T + offset) ** degree
    if not np.all(np.isfinite(gram)):
        raise EigenspaceError(
            "non-finite Gram matrix; rescale the features (smaller scale) or lower the degree"
        )
    col_mean = gram.mean(axis=0)
    tot = col_mean.mean()
    centred = gram - col_mean[None, :] - col_mean[:, None] + tot
    vals, vecs = _top_eigenpairs(centred, K, psd=offset >= 0)
    if vals[0] == 0:
        raise EigenspaceError("no variance in kernel space")
    coeffs = np.zeros((K, n))
    for i in range(K):
        if vals[i] != 0:
            coeffs[i] = _fix_sign(vecs[:, i]) / np.sqrt(abs(vals[i]))
    model = EigenModel(
        kind="poly",
        mean=mean,
        eigenvalues=vals / n,
        degree=int(degree),
        offset=float(offset),
        scale=float(scale),
        train_vectors=Xc,
        coeffs=coeffs,
        gram_col_mean=col_mean,
        gram_mean=float(tot),
    )
    model.train_projections = centred @ coeffs.T / scale
    return model


def project_many(model, vectors):
    """Project rows of ``vectors`` (n, D) into the K-dimensional eigenspace."""
    X = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if X.shape[1] != model.dim:
        raise EigenspaceError(f"dimension mismatch: got {X.shape[1]}, model expects {model.dim}")
    Xc = X - model.mean
    if model.kind == "linear":
        out = Xc @ model.basis.T
    else:
        Z = Xc * model.scale
        Zt = model.train_vectors * model.scale
        kx = (Z @ Zt.T + model.offset) ** model.degree
        kx = kx - model.gram_col_mean[None, :] - kx.mean(axis=1, keepdims=True) + model.gram_mean
        out = kx @ model.coeffs.T / model.scale
    if not np.all(np.isfinite(out)):
        raise EigenspaceError("non-finite projection")
    return out


def project(model, template):
    """Project a single flattened template."""
    return project_many(model, np.ravel(template)[None, :])[0]


def project_sequence(model, templates, frame_index=None):
    """Trajectory with one eigenspace point per template, order preserved."""
    arr = np.asarray(templates)
    vecs = arr.reshape(len(arr), -1)
    return Trajectory(project_many(model, vecs), frame_index)


def class_separation_ratio(model, data, points=None):
    """Mean out-of-class over mean in-class pairwise distance of projected samples."""
    labels = np.asarray(data.labels)
    if len(set(data.labels)) < 2:
        raise EigenspaceError("class separation needs at least two classes")
    Y = project_many(model, data.vectors) if points is None else points
    d = pdist(Y)
    n = len(labels)
    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    s_out = d[~same].mean()
    s_in = d[same].mean() if np.any(same) else 0.0
    if s_in == 0:
        return float("inf")
    return float(s_out / s_in)


def tune_kernel_degree(data, K=DEFAULT_K, d_range=DEFAULT_DEGREES, offset=1.0, scale=None):
    """Degree maximizing the class separation ratio.

    Returns ``(best_degree, {degree: ratio})``; ties go to the smaller degree.
    """
    degrees = sorted(set(int(d) for d in d_range))
    if not degrees:
        raise EigenspaceError("empty degree range")
    curve = {}
    for d in degrees:
        model = train_kpca(data, K, degree=d, offset=offset, scale=scale)
        curve[d] = class_separation_ratio(model, data, points=model.train_projections)
    best = max(degrees, key=lambda d: (curve[d], -d))
    return best, curve


# ---------------------------------------------------------------------------
# persistence


def write_sidecar(path, rows):
    rows = np.atleast_2d(np.asarray(rows, dtype="<f4"))
    with open(path, "wb") as fh:
        fh.write(SIDECAR_MAGIC)
        fh.write(struct.pack("<HII", SIDECAR_VERSION, rows.shape[1], rows.shape[0]))
        fh.write(rows.tobytes(order="C"))


def read_sidecar(path):
    with open(path, "rb") as fh:
        head = fh.read(14)
        if len(head) < 14 or head[:4] != SIDECAR_MAGIC:
            raise EigenspaceError(f"{path}: not an MCEM sidecar")
        version, dim, count = struct.unpack("<HII", head[4:])
        if version != SIDECAR_VERSION:
            raise EigenspaceError(f"{path}: unsupported sidecar version {version}")
        payload = fh.read()
    if len(payload) != 4 * dim * count:
        raise EigenspaceError(f"{path}: truncated sidecar ({len(payload)} bytes)")
    return np.frombuffer(payload, dtype="<f4").reshape(count, dim).astype(np.float64)


def save_model(model, directory, extra=None):
    """Write ``eigen.json`` plus float32 sidecars into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {
        "format": "mcem-manifest",
        "version": SIDECAR_VERSION,
        "kind": model.kind,
        "K": model.K,
        "D": model.dim,
        "degree": model.degree,
        "offset": model.offset,
        "scale": model.scale,
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "gram_mean": model.gram_mean,
        "n_train": model.n_train,
    }
    if extra:
        manifest.update(extra)
    if model.kind == "linear":
        write_sidecar(os.path.join(directory, "eigen.mcem"), np.vstack([model.mean, model.basis]))
    else:
        write_sidecar(
            os.path.join(directory, "eigen.mcem"), np.vstack([model.mean, model.train_vectors])
        )
        # Coefficient rows are N_T long, so they go in their own sidecar.
        write_sidecar(
            os.path.join(directory, "coeffs.mcem"),
            np.vstack([model.coeffs, model.gram_col_mean]),
        )
    with open(os.path.join(directory, "eigen.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_model(directory):
    try:
        with open(os.path.join(directory, "eigen.json")) as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise EigenspaceError(f"cannot read model manifest in {directory}: {exc}") from exc
    rows = read_sidecar(os.path.join(directory, "eigen.mcem"))
    vals = np.asarray(manifest["eigenvalues"], dtype=np.float64)
    if rows.shape[1] != manifest["D"]:
        raise EigenspaceError("sidecar dimension disagrees with manifest")
    if manifest["kind"] == "linear":
        model = EigenModel(kind="linear", mean=rows[0], eigenvalues=vals, basis=rows[1:])
    else:
        extra = read_sidecar(os.path.join(directory, "coeffs.mcem"))
        model = EigenModel(
            kind="poly",
            mean=rows[0],
            eigenvalues=vals,
            degree=int(manifest["degree"]),
            offset=float(manifest["offset"]),
            scale=float(manifest["scale"]),
            train_vectors=rows[1:],
            coeffs=extra[:-1],
            gram_col_mean=extra[-1],
            gram_mean=float(manifest["gram_mean"]),
        )
    return model, manifest
