"""Fairness penalties and the composite training objective.

Two penalties discourage the classifier from learning a correlation
between the predicted probability of a record's true label and the word
embedding of the record's name:

* cluster penalty ("clucl"): names are clustered once up front; for each
  class, the penalty is the average squared difference between per-cluster
  means of the true-label probability, taken over ordered cluster pairs.
* covariance penalty ("cocl"): for each class, the penalty is the l2 norm
  of the covariance between the true-label probability and the name
  vector.

Both are averaged over classes and added to the base loss scaled by a
nonnegative strength. Gradients flow only through the true-label
probabilities; cluster assignments and name vectors are constants during
training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANTS = ("none", "clucl", "cocl")


@dataclass
class PenaltyInputs:
    """Aligned per-record arrays consumed by the penalties.

    Records with include_mask False (e.g. names with no embedding
    coverage) are ignored by every statistic. cluster_ids are only needed
    for the cluster penalty, name_vectors only for the covariance penalty.
    """

    true_label_probs: np.ndarray
    labels: np.ndarray
    cluster_ids: np.ndarray | None = None
    name_vectors: np.ndarray | None = None
    include_mask: np.ndarray | None = None

    def __post_init__(self):
        self.true_label_probs = np.asarray(self.true_label_probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = self.true_label_probs.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels must align with true_label_probs")
        if self.include_mask is None:
            self.include_mask = np.ones(n, dtype=bool)
        else:
            self.include_mask = np.asarray(self.include_mask, dtype=bool)
            if self.include_mask.shape != (n,):
                raise ValueError("include_mask must align with true_label_probs")
        if self.cluster_ids is not None:
            self.cluster_ids = np.asarray(self.cluster_ids, dtype=np.int64)
            if self.cluster_ids.shape != (n,):
                raise ValueError("cluster_ids must align with true_label_probs")
        if self.name_vectors is not None:
            self.name_vectors = np.asarray(self.name_vectors, dtype=np.float64)
            if self.name_vectors.ndim != 2 or self.name_vectors.shape[0] != n:
                raise ValueError("name_vectors must be an (n, dim) array")

    def __len__(self) -> int:
        return self.true_label_probs.shape[0]


def _require_clusters(inputs: PenaltyInputs, k: int) -> np.ndarray:
    if inputs.cluster_ids is None:
        raise ValueError("cluster_ids are required for the cluster penalty")
    ids = inputs.cluster_ids[inputs.include_mask]
    if len(ids) and (ids.min() < 0 or ids.max() >= k):
        raise ValueError(f"cluster ids must lie in [0, {k})")
    return inputs.cluster_ids


def _require_vectors(inputs: PenaltyInputs) -> np.ndarray:
    if inputs.name_vectors is None:
        raise ValueError("name_vectors are required for the covariance penalty")
    return inputs.name_vectors


def clucl_penalty(inputs: PenaltyInputs, k: int, num_classes: int) -> float:
    """Average over classes of the mean squared pairwise cluster disparity.

    For class c, every ordered pair (u, v) of clusters that both contain at
    least one class-c record contributes (mean_u - mean_v)^2, where mean_u
    is the average true-label probability of class-c records in cluster u;
    the sum is divided by the number of evaluated ordered pairs. Classes
    with fewer than two populated clusters contribute 0, as does k = 1.
    """
    if k < 1:
        raise ValueError("k must be positive")
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    if k == 1:
        return 0.0
    cluster_ids = _require_clusters(inputs, k)
    probs = inputs.true_label_probs
    total = 0.0
    for c in range(num_classes):
        sel = inputs.include_mask & (inputs.labels == c)
        if not np.any(sel):
            continue
        p = probs[sel]
        ids = cluster_ids[sel]
        means = np.array(
            [p[ids == u].mean() for u in range(k) if np.any(ids == u)]
        )
        v = len(means)
        if v < 2:
            continue
        diffs = means[:, None] - means[None, :]
        total += float(np.sum(diffs**2)) / (v * (v - 1))
    return total / num_classes


def cocl_penalty(inputs: PenaltyInputs, num_classes: int) -> float:
    """Average over classes of the covariance norm.

    For class c with at least two included records, the covariance between
    the true-label probability and the name vector is the (population)
    mean of (p_i - mean_p) * (vec_i - mean_vec); the class contributes its
    l2 norm. Classes with fewer than two included records contribute 0.
    """
    if num_classes < 1:
        raise ValueError("num_classes must be positive")
    vectors = _require_vectors(inputs)
    probs = inputs.true_label_probs
    total = 0.0
    for c in range(num_classes):
        sel = inputs.include_mask & (inputs.labels == c)
        if np.count_nonzero(sel) < 2:
            continue
        p = probs[sel]
        nv = vectors[sel]
        cov = ((p - p.mean())[:, None] * (nv - nv.mean(axis=0))).mean(axis=0)
        total += float(np.linalg.norm(cov))
    return total / num_classes


def clucl_gradient(inputs: PenaltyInputs, k: int, num_classes: int) -> np.ndarray:
    """d(cluster penalty)/d(true_label_prob_i), one entry per record."""
    if k < 1:
        raise ValueError("k must be positive")
    grad = np.zeros(len(inputs))
    if k == 1:
        return grad
    cluster_ids = _require_clusters(inputs, k)
    probs = inputs.true_label_probs
    for c in range(num_classes):
        sel = inputs.include_mask & (inputs.labels == c)
        if not np.any(sel):
            continue
        p = probs[sel]
        ids = cluster_ids[sel]
        valid = [u for u in range(k) if np.any(ids == u)]
        v = len(valid)
        if v < 2:
            continue
        means = np.array([p[ids == u].mean() for u in valid])
        counts = np.array([np.count_nonzero(ids == u) for u in valid])
        pairs = v * (v - 1)
        # d l_c / d mean_u = (4 / pairs) * sum_v (mean_u - mean_v)
        mean_grads = 4.0 * (v * means - means.sum()) / pairs
        sel_idx = np.flatnonzero(sel)
        for u, mg, cnt in zip(valid, mean_grads, counts):
            members = sel_idx[ids == u]
            grad[members] = mg / (cnt * num_classes)
    return grad


def cocl_gradient(inputs: PenaltyInputs, num_classes: int) -> np.ndarray:
    """d(covariance penalty)/d(true_label_prob_i), one entry per record."""
    vectors = _require_vectors(inputs)
    probs = inputs.true_label_probs
    grad = np.zeros(len(inputs))
    for c in range(num_classes):
        sel = inputs.include_mask & (inputs.labels == c)
        n_c = int(np.count_nonzero(sel))
        if n_c < 2:
            continue
        p = probs[sel]
        nv = vectors[sel]
        centered = nv - nv.mean(axis=0)
        cov = ((p - p.mean())[:, None] * centered).mean(axis=0)
        norm = float(np.linalg.norm(cov))
        if norm == 0.0:
            continue
        grad[np.flatnonzero(sel)] = centered @ (cov / norm) / (n_c * num_classes)
    return grad


def penalty_value(inputs: PenaltyInputs, variant: str, k: int,
                  num_classes: int) -> float:
    """Value of the selected penalty; variant "none" is 0."""
    if variant == "none":
        return 0.0
    if variant == "clucl":
        return clucl_penalty(inputs, k, num_classes)
    if variant == "cocl":
        return cocl_penalty(inputs, num_classes)
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def penalty_gradient(inputs: PenaltyInputs, variant: str, k: int,
                     num_classes: int) -> np.ndarray:
    """Exact partials of the selected penalty w.r.t. each true-label prob.

    Masked-out records get a zero entry. The caller chains these into
    logit gradients through the softmax Jacobian restricted to the
    true-label coordinate.
    """
    if variant == "clucl":
        return clucl_gradient(inputs, k, num_classes)
    if variant == "cocl":
        return cocl_gradient(inputs, num_classes)
    raise ValueError(f"unknown variant {variant!r}; expected clucl or cocl")


def total_loss(base: float, penalty: float, lam: float) -> float:
    """Composite objective: base + lam * penalty."""
    if lam < 0:
        raise ValueError("penalty strength must be nonnegative")
    return base + lam * penalty
