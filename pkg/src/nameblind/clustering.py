"""k-means over name vectors, seeded with k-means++.

Clustering runs once on the training-set name vectors and the assignments
are frozen for the rest of training; distances are squared Euclidean
throughout. Deterministic for a given (points, k, seed, max_iters, tol).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-4
DEFAULT_N_INIT = 10
EXHAUSTIVE_INIT_CAP = 200  # try all k-subsets as inits when this cheap


@dataclass
class ClusterModel:
    """Fitted k-means state.

    assignments hold, for each input point, the index of its nearest
    centroid (lowest index on ties); inertia is the sum of squared
    distances from each point to its assigned centroid. inertia_history
    records the inertia after every assignment pass, so callers can verify
    the Lloyd iterations never increased it.
    """

    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list[float] = field(default_factory=list)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a nonempty (n, dim) array")
    return pts


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_pp_init(points, k: int, seed: int) -> np.ndarray:
    """Choose k initial centroids with the k-means++ rule.

    The first centroid is uniform over the points (seeded); each further
    centroid is sampled with probability proportional to its squared
    distance to the nearest centroid chosen so far.
    """
    pts = _as_points(points)
    if k < 1:
        raise ValueError("k must be positive")
    distinct = np.unique(pts, axis=0)
    if len(distinct) < k:
        raise ValueError(
            f"need at least k={k} distinct points, got {len(distinct)}"
        )
    rng = np.random.default_rng(seed)
    centroids = np.empty((k, pts.shape[1]))
    centroids[0] = pts[rng.integers(len(pts))]
    if k == 1:
        return centroids
    d2 = _sq_dists(pts, centroids[:1])[:, 0]
    for j in range(1, k):
        probs = d2 / d2.sum()
        idx = rng.choice(len(pts), p=probs)
        centroids[j] = pts[idx]
        d2 = np.minimum(d2, _sq_dists(pts, centroids[j : j + 1])[:, 0])
    return centroids


def kmeans(points, k: int, seed: int, max_iters: int = DEFAULT_MAX_ITERS,
           tol: float = DEFAULT_TOL, n_init: int = DEFAULT_N_INIT) -> ClusterModel:
    """Best of n_init seeded k-means++ runs (by final inertia).

    Single-run Lloyd regularly sticks in local minima even on tiny
    instances, so like most k-means implementations this one repeats the
    init/iterate cycle n_init times with derived seeds and keeps the run
    with the lowest inertia (earliest run wins ties). On inputs small
    enough that every k-subset of distinct points is enumerable cheaply,
    Lloyd additionally runs from each such init: k-means++ seeding
    provably cannot reach some optima of tiny instances no matter how
    many restarts it gets. Deterministic for a given
    (points, k, seed, max_iters, tol, n_init).
    """
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    best = None
    for i in range(n_init):
        model = _kmeans_single(points, k, seed + i, max_iters, tol)
        if best is None or model.inertia < best.inertia:
            best = model
    pts = _as_points(points)
    distinct = np.unique(pts, axis=0)
    if _n_subsets(len(distinct), k) <= EXHAUSTIVE_INIT_CAP:
        for subset in combinations(range(len(distinct)), k):
            model = _lloyd(pts, distinct[list(subset)].copy(), max_iters, tol)
            if model.inertia < best.inertia:
                best = model
    return best


def _n_subsets(n: int, k: int) -> float:
    try:
        return comb(n, k)
    except ValueError:
        return 0


def _kmeans_single(points, k: int, seed: int, max_iters: int,
                   tol: float) -> ClusterModel:
    """Lloyd iterations from one k-means++ init."""
    pts = _as_points(points)
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return _lloyd(pts, kmeans_pp_init(pts, k, seed), max_iters, tol)


def _lloyd(pts: np.ndarray, centroids: np.ndarray, max_iters: int,
           tol: float) -> ClusterModel:
    """Standard Lloyd iterations from the given initial centroids.

    Stops when every centroid moves less than tol (Euclidean) or after
    max_iters. A cluster left empty by an assignment pass is reseeded to
    the point currently farthest from its assigned centroid, which keeps
    all k clusters alive without increasing the objective.
    """
    k = len(centroids)
    history: list[float] = []
    iterations_run = 0
    for _ in range(max_iters):
        iterations_run += 1
        d2 = _sq_dists(pts, centroids)
        assignments = np.argmin(d2, axis=1)
        # Reseeding can itself empty a cluster (by stealing its only
        # member), so sweep until none are empty; k passes always suffice.
        for _sweep in range(k):
            empty = np.flatnonzero(np.bincount(assignments, minlength=k) == 0)
            if len(empty) == 0:
                break
            for j in empty:
                per_point = d2[np.arange(len(pts)), assignments]
                idx = int(np.argmax(per_point))
                if per_point[idx] == 0.0:
                    break
                centroids[j] = pts[idx]
                assignments[idx] = j
                d2[:, j] = _sq_dists(pts, centroids[j : j + 1])[:, 0]
        history.append(float(np.sum((pts - centroids[assignments]) ** 2)))
        new_centroids = centroids.copy()
        for j in range(k):
            members = pts[assignments == j]
            if len(members) > 0:
                new_centroids[j] = members.mean(axis=0)
        shift = float(np.linalg.norm(new_centroids - centroids, axis=1).max())
        centroids = new_centroids
        if shift < tol:
            break
    d2 = _sq_dists(pts, centroids)
    assignments = np.argmin(d2, axis=1)
    inertia = float(np.sum((pts - centroids[assignments]) ** 2))
    history.append(inertia)
    return ClusterModel(
        k=k,
        centroids=centroids,
        assignments=assignments,
        inertia=inertia,
        iterations_run=iterations_run,
        inertia_history=history,
    )


def assign(model: ClusterModel, point) -> int:
    """Index of the centroid nearest to one point (lowest index on ties)."""
    pt = np.asarray(point, dtype=np.float64)
    if pt.shape != (model.centroids.shape[1],):
        raise ValueError(
            f"point has dimension {pt.shape}, centroids have "
            f"dimension {model.centroids.shape[1]}"
        )
    d2 = np.sum((model.centroids - pt) ** 2, axis=1)
    return int(np.argmin(d2))


def write_cluster_model(model: ClusterModel, path) -> None:
    """Export centroids as text: a "k dim" header, then one row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{model.k} {model.centroids.shape[1]}\n")
        for row in model.centroids:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def write_assignments(record_ids, assignments, path) -> None:
    """Export assignments as two tab-separated columns (id, cluster)."""
    if len(record_ids) != len(assignments):
        raise ValueError("record_ids and assignments must align")
    with open(path, "w", encoding="utf-8") as fh:
        for rid, cluster in zip(record_ids, assignments):
            fh.write(f"{rid}\t{int(cluster)}\n")
