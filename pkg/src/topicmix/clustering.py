"""K-Means (k-means++ seeding, Lloyd or mini-batch iterations) and the
two-level scheme: k1 document clusters, then k2 clusters of the k1
centroids.

All arithmetic is float64 with a fixed accumulation order, so a given
(X, k, seed, max_iter, tol) always produces the identical model. Distances
are squared Euclidean; on unit-norm rows that is monotone in cosine
distance, so there is a single metric code path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EmbeddingMatrix, read_embeddings, write_embeddings
from .errors import DataError

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-4
DEFAULT_N_INIT = 10


@dataclass(frozen=True)
class ClusterModel:
    """A fitted K-Means model: centroids plus per-point assignments."""

    k: int
    dim: int
    centroids: np.ndarray       # (k, dim) float64
    assignments: np.ndarray     # (n,) int32, each in [0, k)
    inertia: float
    inertia_history: tuple[float, ...]
    seed: int
    ids: tuple[str, ...] | None = None

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.k)


@dataclass(frozen=True)
class TwoLevelModel:
    """Level-1 clusters of documents and level-2 clusters of centroids."""

    level1: ClusterModel
    level2: ClusterModel
    fine_of_doc: np.ndarray     # (n,) int32: level2.assignments[level1.assignments]
    ids: tuple[str, ...] | None = None

    @property
    def k1(self) -> int:
        return self.level1.k

    @property
    def k2(self) -> int:
        return self.level2.k

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.fine_of_doc == cluster)


def _as_matrix(X) -> tuple[np.ndarray, tuple[str, ...] | None]:
    if isinstance(X, EmbeddingMatrix):
        return np.asarray(X.vectors, dtype=np.float64), X.ids
    return np.asarray(X, dtype=np.float64), None


def _pairwise_sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d2 = (
        np.einsum("ij,ij->i", X, X)[:, None]
        + np.einsum("ij,ij->i", C, C)[None, :]
        - 2.0 * (X @ C.T)
    )
    np.maximum(d2, 0.0, out=d2)
    return d2


def _nearest(X: np.ndarray, C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-centroid index per row (ties broken toward the lowest index)."""
    d2 = _pairwise_sq_dists(X, C)
    assign = np.argmin(d2, axis=1)
    return assign.astype(np.int32), d2[np.arange(len(X)), assign]


def _plusplus_init(X: np.ndarray, k: int, rng: np.random.Generator,
                   weights: np.ndarray) -> np.ndarray:
    """k-means++ seeding; duplicate-point corner cases fall back to uniform."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    probs = weights / weights.sum()
    first = int(rng.choice(n, p=probs))
    centers[0] = X[first]
    d2 = _pairwise_sq_dists(X, centers[:1])[:, 0]
    for j in range(1, k):
        mass = weights * d2
        total = mass.sum()
        if total <= 0.0:
            idx = int(rng.choice(n))
        else:
            idx = int(rng.choice(n, p=mass / total))
        centers[j] = X[idx]
        d2 = np.minimum(d2, _pairwise_sq_dists(X, centers[j:j + 1])[:, 0])
    return centers


def _repair_empty(X: np.ndarray, C: np.ndarray, assign: np.ndarray,
                  dists: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Reseat each empty cluster on the point farthest from its centroid."""
    counts = np.bincount(assign, minlength=C.shape[0])
    empties = np.flatnonzero(counts == 0)
    if empties.size == 0:
        return C, assign, dists
    C = C.copy()
    dists = dists.copy()
    for cluster in empties:
        far = int(np.argmax(dists))
        C[cluster] = X[far]
        # claim the point immediately so later empties pick a different one
        assign = assign.copy()
        assign[far] = cluster
        dists[far] = 0.0
    assign, dists = _nearest(X, C)
    return C, assign, dists


def kmeans_fit(
    X,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    sample_weight: np.ndarray | None = None,
    minibatch: int | None = None,
    n_init: int = DEFAULT_N_INIT,
) -> ClusterModel:
    """Fit K-Means with k-means++ seeding.

    Runs ``n_init`` independent initializations (sub-seeded from ``seed``)
    and keeps the lowest-inertia fit, so a single unlucky seeding cannot
    merge well-separated clusters. Lloyd iterations run until the largest
    centroid shift drops below ``tol`` or ``max_iter`` is reached; the
    recorded inertia history (of the winning run) is non-increasing. With
    ``minibatch`` set, centroids follow per-center streaming updates
    instead (inertia then only decreases in expectation, and the history
    holds just the final value).
    """
    data, ids = _as_matrix(X)
    n = data.shape[0]
    if k <= 0:
        raise DataError(f"k must be positive, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds number of rows {n}")
    if max_iter < 1 or n_init < 1:
        raise DataError("max_iter and n_init must be >= 1")
    weights = (
        np.ones(n, dtype=np.float64)
        if sample_weight is None
        else np.asarray(sample_weight, dtype=np.float64)
    )
    if weights.shape != (n,) or np.any(weights < 0) or weights.sum() <= 0:
        raise DataError("sample_weight must be non-negative with positive total")

    best: tuple | None = None
    for sub_seed in np.random.SeedSequence(seed).generate_state(n_init):
        C, assign, inertia, history = _single_fit(
            data, k, int(sub_seed), max_iter, tol, weights, minibatch)
        if best is None or inertia < best[2]:
            best = (C, assign, inertia, history)
    C, assign, inertia, history = best

    return ClusterModel(
        k=k,
        dim=data.shape[1],
        centroids=C,
        assignments=assign,
        inertia=inertia,
        inertia_history=tuple(history),
        seed=seed,
        ids=ids,
    )


def _single_fit(data, k, seed, max_iter, tol, weights, minibatch):
    rng = np.random.default_rng(seed)
    C = _plusplus_init(data, k, rng, weights)

    history: list[float] = []
    if minibatch is not None:
        C = _minibatch_iterations(data, C, rng, max_iter, int(minibatch))
    else:
        for _ in range(max_iter):
            assign, dists = _nearest(data, C)
            C, assign, dists = _repair_empty(data, C, assign, dists)
            history.append(float(np.dot(weights, dists)))
            new_C = _weighted_means(data, assign, k, weights, C)
            shift = float(np.max(np.linalg.norm(new_C - C, axis=1)))
            C = new_C
            if shift < tol:
                break
    assign, dists = _nearest(data, C)
    C, assign, dists = _repair_empty(data, C, assign, dists)
    inertia = float(np.dot(weights, dists))
    history.append(inertia)
    return C, assign, inertia, history


def _weighted_means(X: np.ndarray, assign: np.ndarray, k: int,
                    weights: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Per-cluster weighted centroid, accumulated in fixed row order."""
    sums = np.zeros((k, X.shape[1]), dtype=np.float64)
    totals = np.zeros(k, dtype=np.float64)
    np.add.at(sums, assign, X * weights[:, None])
    np.add.at(totals, assign, weights)
    out = fallback.copy()
    nonzero = totals > 0
    out[nonzero] = sums[nonzero] / totals[nonzero, None]
    return out


def _minibatch_iterations(X: np.ndarray, C: np.ndarray, rng: np.random.Generator,
                          iters: int, batch: int) -> np.ndarray:
    n = X.shape[0]
    batch = max(1, min(batch, n))
    C = C.copy()
    counts = np.zeros(C.shape[0], dtype=np.float64)
    for _ in range(iters):
        idx = rng.choice(n, size=batch, replace=False)
        M = X[idx]
        assign, _ = _nearest(M, C)
        for j in range(batch):
            c = assign[j]
            counts[c] += 1.0
            eta = 1.0 / counts[c]
            C[c] = (1.0 - eta) * C[c] + eta * M[j]
    return C


def two_level_fit(
    X,
    k1: int,
    k2: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    weighted: bool = False,
    minibatch: int | None = None,
    n_init: int = DEFAULT_N_INIT,
) -> TwoLevelModel:
    """Cluster rows into k1 groups, then the k1 centroids into k2 groups.

    Level-2 treats centroids as unweighted points unless ``weighted``,
    which weights them by level-1 cluster size.
    """
    data, ids = _as_matrix(X)
    if not (1 <= k2 <= k1 <= data.shape[0]):
        raise DataError(f"need 1 <= k2 <= k1 <= rows, got k1={k1}, k2={k2}, rows={data.shape[0]}")
    level1 = kmeans_fit(X, k1, seed=seed, max_iter=max_iter, tol=tol,
                        minibatch=minibatch, n_init=n_init)
    sizes = level1.sizes().astype(np.float64) if weighted else None
    level2 = kmeans_fit(level1.centroids, k2, seed=seed + 1, max_iter=max_iter,
                        tol=tol, sample_weight=sizes, n_init=n_init)
    fine = level2.assignments[level1.assignments]
    return TwoLevelModel(level1=level1, level2=level2, fine_of_doc=fine.astype(np.int32), ids=ids)


def sample_cluster(model, cluster: int, n: int, seed: int = 0) -> list:
    """Sample up to n members of a cluster uniformly without replacement.

    Returns document ids when the model carries them, member indices
    otherwise. Undersized clusters return all members (in index order).
    """
    if isinstance(model, TwoLevelModel):
        members = model.members(cluster)
        ids = model.ids
    elif isinstance(model, ClusterModel):
        members = model.members(cluster)
        ids = model.ids
    else:
        raise DataError(f"cannot sample from {type(model).__name__}")
    if members.size == 0:
        raise DataError(f"cluster {cluster} is empty")
    if members.size > n:
        rng = np.random.default_rng(seed)
        members = np.sort(rng.choice(members, size=n, replace=False))
    if ids is None:
        return [int(i) for i in members]
    return [ids[i] for i in members]


# ---------------------------------------------------------------------------
# Persistence: JSON header + EMB1 centroid matrix + assignment lines
# ---------------------------------------------------------------------------

def save_cluster_model(prefix: str | Path, model: ClusterModel) -> None:
    from .ioutil import atomic_open

    prefix = str(prefix)
    header = {"k": model.k, "dim": model.dim, "seed": model.seed, "inertia": model.inertia}
    with atomic_open(prefix + ".json", "w") as fh:
        json.dump(header, fh, sort_keys=True)
        fh.write("\n")
    centroid_ids = tuple(str(i) for i in range(model.k))
    write_embeddings(
        prefix + ".centroids.emb",
        EmbeddingMatrix(ids=centroid_ids, vectors=model.centroids.astype(np.float32)),
        normalize=False,
    )
    with atomic_open(prefix + ".assign", "w") as fh:
        for a in model.assignments:
            fh.write(f"{int(a)}\n")
    ids = model.ids if model.ids is not None else tuple(
        str(i) for i in range(len(model.assignments))
    )
    with atomic_open(prefix + ".assign.ids", "w") as fh:
        for doc_id in ids:
            fh.write(doc_id + "\n")


def load_cluster_model(prefix: str | Path) -> ClusterModel:
    prefix = str(prefix)
    with open(prefix + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    centroids = read_embeddings(prefix + ".centroids.emb").vectors.astype(np.float64)
    with open(prefix + ".assign", "r", encoding="utf-8") as fh:
        assignments = np.array([int(line) for line in fh], dtype=np.int32)
    with open(prefix + ".assign.ids", "r", encoding="utf-8") as fh:
        ids = tuple(line.rstrip("\n") for line in fh)
    return ClusterModel(
        k=header["k"],
        dim=header["dim"],
        centroids=centroids,
        assignments=assignments,
        inertia=header["inertia"],
        inertia_history=(header["inertia"],),
        seed=header["seed"],
        ids=ids,
    )


def save_two_level(prefix: str | Path, model: TwoLevelModel) -> None:
    save_cluster_model(str(prefix) + ".l1", model.level1)
    save_cluster_model(str(prefix) + ".l2", model.level2)


def load_two_level(prefix: str | Path) -> TwoLevelModel:
    level1 = load_cluster_model(str(prefix) + ".l1")
    level2 = load_cluster_model(str(prefix) + ".l2")
    fine = level2.assignments[level1.assignments]
    return TwoLevelModel(level1=level1, level2=level2,
                         fine_of_doc=fine.astype(np.int32), ids=level1.ids)
