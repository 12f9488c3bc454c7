import itertools

import numpy as np
import pytest

from topicmix.clustering import (kmeans_fit, load_cluster_model, load_two_level,
                                 sample_cluster, save_cluster_model,
                                 save_two_level, two_level_fit)
from topicmix.embedding import EmbeddingMatrix
from topicmix.errors import DataError


def blobs(centers, per_blob, scale, seed, dim=None):
    rng = np.random.default_rng(seed)
    centers = np.asarray(centers, dtype=np.float64)
    if dim is not None and centers.shape[1] < dim:
        pad = np.zeros((centers.shape[0], dim - centers.shape[1]))
        centers = np.hstack([centers, pad])
    rows, labels = [], []
    for i, c in enumerate(centers):
        rows.append(c + scale * rng.normal(size=(per_blob, centers.shape[1])))
        labels.extend([i] * per_blob)
    return np.vstack(rows), np.array(labels)


def test_exact_fit_when_k_equals_points():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    model = kmeans_fit(X, k=4, seed=0)
    assert model.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(model.assignments) == [0, 1, 2, 3]


def test_two_blob_global_optimum_matches_brute_force():
    pts = np.array([[0.0, 0.0], [0.1, 0.0], [-0.1, 0.0],
                    [10.0, 0.0], [10.1, 0.0], [9.9, 0.0]])
    # brute-force oracle over all 2-partitions of the 6 points
    best_sse, best_left = None, None
    for r in range(1, 6):
        for left in itertools.combinations(range(6), r):
            right = [i for i in range(6) if i not in left]
            cl = pts[list(left)].mean(axis=0)
            cr = pts[right].mean(axis=0)
            sse = ((pts[list(left)] - cl) ** 2).sum() + ((pts[right] - cr) ** 2).sum()
            if best_sse is None or sse < best_sse:
                best_sse, best_left = sse, set(left)
    assert best_left in ({0, 1, 2}, {3, 4, 5})

    model = kmeans_fit(pts, k=2, seed=0)
    groups = [set(np.flatnonzero(model.assignments == c)) for c in range(2)]
    assert {frozenset(g) for g in groups} == {frozenset({0, 1, 2}), frozenset({3, 4, 5})}
    assert model.inertia == pytest.approx(best_sse, rel=1e-9)
    for c in model.centroids:
        assert min(abs(c[0] - 0.0), abs(c[0] - 10.0)) < 0.1
    assert sorted(np.bincount(model.assignments)) == [3, 3]


def test_seed_determinism_bitwise():
    X, _ = blobs([[0, 0], [5, 5], [9, 0]], 40, 0.5, seed=4)
    a = kmeans_fit(X, k=3, seed=11)
    b = kmeans_fit(X, k=3, seed=11)
    assert a.centroids.tobytes() == b.centroids.tobytes()
    assert np.array_equal(a.assignments, b.assignments)
    assert a.inertia == b.inertia


def test_lloyd_inertia_monotone_on_random_data():
    rng = np.random.default_rng(0)
    for trial in range(20):
        X = rng.normal(size=(80, 6))
        model = kmeans_fit(X, k=5, seed=trial)
        hist = np.array(model.inertia_history)
        assert np.all(np.diff(hist) <= 1e-9)


def test_assignments_optimal_at_convergence():
    X, _ = blobs([[0, 0], [4, 4]], 50, 0.6, seed=2)
    model = kmeans_fit(X, k=2, seed=3)
    d2 = ((X[:, None, :] - model.centroids[None, :, :]) ** 2).sum(axis=2)
    assert np.array_equal(np.argmin(d2, axis=1), model.assignments)


def test_inertia_consistent_with_centroids():
    X, _ = blobs([[0, 0], [3, 3], [6, 0]], 30, 0.4, seed=5)
    model = kmeans_fit(X, k=3, seed=5)
    d2 = ((X - model.centroids[model.assignments]) ** 2).sum()
    assert model.inertia == pytest.approx(d2, rel=1e-6)


def test_k_validation():
    X = np.zeros((3, 2))
    with pytest.raises(DataError):
        kmeans_fit(X, k=0)
    with pytest.raises(DataError):
        kmeans_fit(X, k=4)


def test_minibatch_runs_and_assigns():
    X, labels = blobs([[0, 0], [8, 8]], 100, 0.5, seed=6)
    model = kmeans_fit(X, k=2, seed=1, max_iter=50, minibatch=32)
    assert model.assignments.shape == (200,)
    # blobs this separated are still recovered
    split = [set(labels[model.assignments == c]) for c in range(2)]
    assert split[0] != split[1]


# ---------------------------------------------------------------------------
# two-level clustering
# ---------------------------------------------------------------------------

def test_two_level_identity_when_k_equals_rows():
    X = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    model = two_level_fit(X, k1=3, k2=3, seed=0)
    assert sorted(model.fine_of_doc) == [0, 1, 2]


def test_two_level_composition_map():
    X, _ = blobs([[0, 0], [6, 6], [12, 0], [6, -6]], 25, 0.4, seed=7)
    model = two_level_fit(X, k1=8, k2=4, seed=1)
    expected = model.level2.assignments[model.level1.assignments]
    assert np.array_equal(model.fine_of_doc, expected)


def test_two_level_recovers_blobs_like_direct_kmeans():
    X, labels = blobs([[0, 0], [10, 10], [20, 0], [10, -10]], 25, 0.3, seed=8, dim=4)
    two = two_level_fit(X, k1=8, k2=4, seed=2)
    direct = kmeans_fit(X, k=4, seed=2)

    def partition(assign):
        return {frozenset(np.flatnonzero(assign == c)) for c in np.unique(assign)}

    truth = {frozenset(np.flatnonzero(labels == b)) for b in range(4)}
    assert partition(two.fine_of_doc) == truth
    assert partition(direct.assignments) == truth


def test_two_level_validates_sizes():
    X = np.zeros((5, 2))
    with pytest.raises(DataError):
        two_level_fit(X, k1=3, k2=4)
    with pytest.raises(DataError):
        two_level_fit(X, k1=9, k2=2)


# ---------------------------------------------------------------------------
# sampling from clusters
# ---------------------------------------------------------------------------

def embedded(X, ids):
    norm = X / np.linalg.norm(X, axis=1, keepdims=True)
    return EmbeddingMatrix(ids=tuple(ids), vectors=norm.astype(np.float32))


def test_sample_cluster_undersized_returns_all():
    X = np.array([[1.0, 0.0], [0.99, 0.01], [0.98, 0.02], [-1.0, 0.0]])
    mat = embedded(X, [f"d{i}" for i in range(4)])
    model = kmeans_fit(mat, k=2, seed=0)
    big = int(np.argmax(np.bincount(model.assignments)))
    got = sample_cluster(model, big, n=10, seed=0)
    assert sorted(got) == sorted(mat.ids[i] for i in model.members(big))


def test_sample_cluster_deterministic_and_without_replacement():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 4))
    mat = embedded(X, [f"d{i:02d}" for i in range(50)])
    model = kmeans_fit(mat, k=2, seed=1)
    cluster = int(np.argmax(np.bincount(model.assignments)))
    a = sample_cluster(model, cluster, n=5, seed=9)
    b = sample_cluster(model, cluster, n=5, seed=9)
    assert a == b
    assert len(set(a)) == 5


def test_sample_cluster_empty_errors():
    X = np.array([[0.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
    model = kmeans_fit(X, k=2, seed=0)
    with pytest.raises(DataError, match="empty"):
        sample_cluster(model, 5, n=1)  # no points carry an out-of-range index


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def test_cluster_model_round_trip(tmp_path):
    X, _ = blobs([[0, 0], [5, 5]], 20, 0.3, seed=9)
    ids = tuple(f"d{i}" for i in range(40))
    mat = EmbeddingMatrix(ids=ids, vectors=(X / np.linalg.norm(X, axis=1, keepdims=True)).astype(np.float32))
    model = kmeans_fit(mat, k=2, seed=4)
    save_cluster_model(tmp_path / "m", model)
    back = load_cluster_model(tmp_path / "m")
    assert back.k == model.k
    assert np.allclose(back.centroids, model.centroids, atol=1e-6)
    assert np.array_equal(back.assignments, model.assignments)
    assert back.ids == ids


def test_two_level_round_trip(tmp_path):
    X, _ = blobs([[0, 0], [5, 5], [10, 0]], 10, 0.2, seed=10)
    model = two_level_fit(X, k1=6, k2=3, seed=5)
    save_two_level(tmp_path / "t", model)
    back = load_two_level(tmp_path / "t")
    assert np.array_equal(back.fine_of_doc, model.fine_of_doc)
