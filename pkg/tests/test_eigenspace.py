import numpy as np
import pytest

from motioncloud import eigenspace as E


def _blobs(seed=0, n=50, dim=64, classes=3):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, 3, (classes, dim))
    labels = [f"c{i % classes}" for i in range(n)]
    X = np.array([centres[i % classes] for i in range(n)]) + rng.normal(0, 1, (n, dim))
    return E.TrainingSet(X, labels)


def _align_signs(a, b):
    s = np.sign(np.sum(a * b, axis=0))
    s[s == 0] = 1
    return b * s


def test_surrogate_pca_matches_direct_covariance():
    data = _blobs()
    K = 10
    m = E.train_pca(data, K)
    Xc = data.vectors - data.vectors.mean(0)
    cov = Xc.T @ Xc / len(Xc)
    w, v = np.linalg.eigh(cov)
    v = v[:, ::-1][:, :K]
    direct = Xc @ v
    ours = E.project_many(m, data.vectors)
    ours = _align_signs(direct, ours)
    assert np.max(np.abs(ours - direct)) / np.max(np.abs(direct)) < 1e-6
    assert np.allclose(m.eigenvalues, w[::-1][:K], rtol=1e-8)


def test_linear_kernel_kpca_reproduces_pca():
    data = _blobs(1)
    p = E.train_pca(data, 5)
    k = E.train_kpca(data, 5, degree=1, offset=0.0)
    a = E.project_many(p, data.vectors)
    b = _align_signs(a, E.project_many(k, data.vectors))
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-6
    # new points too, not only training samples
    q = np.random.default_rng(2).normal(0, 3, (7, 64))
    qa, qb = E.project_many(p, q), E.project_many(k, q)
    assert np.max(np.abs(qa - _align_signs(qa, qb))) / np.max(np.abs(qa)) < 1e-6


def test_basis_is_orthonormal_and_descending():
    m = E.train_pca(_blobs(3), 10)
    assert np.allclose(m.basis @ m.basis.T, np.eye(10), atol=1e-10)
    assert np.all(np.diff(m.eigenvalues) <= 1e-12)


def test_sign_convention_largest_component_positive():
    m = E.train_pca(_blobs(4), 4)
    for row in m.basis:
        assert row[np.argmax(np.abs(row))] > 0


def test_projection_invariant_to_common_translation():
    data = _blobs(5)
    shift = np.random.default_rng(6).normal(0, 10, 64)
    m1 = E.train_pca(data, 4)
    m2 = E.train_pca(E.TrainingSet(data.vectors + shift, data.labels), 4)
    assert np.allclose(E.project_many(m1, data.vectors), E.project_many(m2, data.vectors + shift))


def test_kpca_training_projection_matches_project():
    data = _blobs(7, n=30, dim=16)
    m = E.train_kpca(data, 4, degree=3, offset=1.0)
    assert np.allclose(m.train_projections, E.project_many(m, data.vectors), atol=1e-9)


def test_rank_deficient_data_gets_null_axes():
    # 3 samples span a 2-D affine subspace; asking for K=3 leaves one null axis
    X = np.array([[0.0, 0, 0, 0], [1, 0, 0, 0], [0, 1, 0, 0]])
    m = E.train_pca(E.TrainingSet(X, ["a", "b", "c"]), 3)
    assert m.eigenvalues[-1] == 0
    assert np.allclose(m.basis @ m.basis.T, np.eye(3), atol=1e-10)


def test_ring_data_separates_better_with_quadratic_kernel():
    rng = np.random.default_rng(0)
    n = 60
    th = rng.uniform(0, 2 * np.pi, 2 * n)
    r = np.r_[np.full(n, 1.0), np.full(n, 3.0)] + rng.normal(0, 0.05, 2 * n)
    data = E.TrainingSet(np.c_[r * np.cos(th), r * np.sin(th)], ["in"] * n + ["out"] * n)
    best, curve = E.tune_kernel_degree(data, 3, range(1, 5), offset=0.0)
    assert curve[2] > curve[1]
    assert best != 1


def test_tuning_ties_go_to_smaller_degree(monkeypatch):
    monkeypatch.setattr(E, "class_separation_ratio", lambda *a, **k: 1.0)
    best, _ = E.tune_kernel_degree(_blobs(8, n=12, dim=8), 2, [3, 1, 2])
    assert best == 1


def test_errors():
    data = _blobs(9, n=6, dim=8)
    with pytest.raises(E.EigenspaceError, match="exceeds"):
        E.train_pca(data, 7)
    with pytest.raises(E.EigenspaceError, match="no variance"):
        E.train_pca(E.TrainingSet(np.ones((4, 3)), list("abab")), 2)
    with pytest.raises(E.EigenspaceError, match="non-finite"):
        E.train_kpca(data, 2, degree=8, offset=1.0, scale=1e40)
    m = E.train_pca(data, 2)
    with pytest.raises(E.EigenspaceError, match="dimension"):
        E.project(m, np.zeros(5))
    with pytest.raises(E.EigenspaceError, match="two classes"):
        E.class_separation_ratio(m, E.TrainingSet(data.vectors, ["a"] * 6))


def test_separation_ratio_infinite_for_collapsed_classes():
    X = np.array([[0.0, 0], [0, 0], [1, 1], [1, 1]])
    data = E.TrainingSet(X, list("aabb"))
    m = E.train_pca(data, 1)
    assert E.class_separation_ratio(m, data) == float("inf")


@pytest.mark.parametrize("kind", ["linear", "poly"])
def test_save_load_round_trip(tmp_path, kind):
    data = _blobs(10, n=20, dim=12)
    m = E.train_pca(data, 4) if kind == "linear" else E.train_kpca(data, 4, 2, 1.0)
    E.save_model(m, str(tmp_path), {"note": "x"})
    m2, manifest = E.load_model(str(tmp_path))
    assert manifest["note"] == "x" and m2.kind == kind
    a, b = E.project_many(m, data.vectors), E.project_many(m2, data.vectors)
    assert np.max(np.abs(a - b)) / np.max(np.abs(a)) < 1e-5  # float32 sidecar


def test_sidecar_rejects_garbage(tmp_path):
    p = tmp_path / "x.mcem"
    p.write_bytes(b"nope")
    with pytest.raises(E.EigenspaceError, match="not an MCEM"):
        E.read_sidecar(str(p))
    E.write_sidecar(str(p), np.ones((2, 3)))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(E.EigenspaceError, match="truncated"):
        E.read_sidecar(str(p))


def test_project_sequence_keeps_order():
    data = _blobs(11, n=10, dim=16)
    m = E.train_pca(data, 3)
    tr = E.project_sequence(m, data.vectors.reshape(10, 4, 4))
    assert np.allclose(tr.points, E.project_many(m, data.vectors))
    assert tr.frame_index.tolist() == list(range(10))
