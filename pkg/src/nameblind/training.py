"""Mini-batch Adam training combining the base loss with a fairness penalty.

Names enter only through the loss: the trained classifier's inputs contain
no name-derived features, so it can be deployed without access to names.
Runs are deterministic given a config seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import losses
from .clustering import ClusterModel, kmeans
from .embeddings import EmbeddingTable, batch_name_vectors
from .model import (
    ModelParams,
    class_weights,
    forward_batch,
    predict_batch,
    weighted_cross_entropy,
)
from .metrics import balanced_tpr


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    lam scales the fairness penalty selected by variant ("none" disables
    it); k is the cluster count used by the cluster penalty.
    """

    lam: float = 0.0
    variant: str = "none"
    k: int = 12
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    l2_coeff: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be nonnegative")
        if self.variant not in losses.VARIANTS:
            raise ValueError(
                f"variant must be one of {losses.VARIANTS}, got {self.variant!r}"
            )
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("Adam eps must be positive")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be nonnegative")


@dataclass
class AdamState:
    """First/second moment accumulators and the shared timestep."""

    m_W: np.ndarray
    v_W: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, num_classes: int, num_features: int) -> "AdamState":
        shape = (num_classes, num_features)
        return cls(
            m_W=np.zeros(shape),
            v_W=np.zeros(shape),
            m_b=np.zeros(num_classes),
            v_b=np.zeros(num_classes),
        )


@dataclass
class EpochRecord:
    epoch: int
    base_loss: float
    penalty: float
    total_loss: float
    val_balanced_tpr: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    cluster_model: ClusterModel | None
    split: tuple[np.ndarray, np.ndarray, np.ndarray]


def train_val_test_split(n: int, seed: int,
                         fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)):
    """Seeded disjoint index split; remainder rows land in the test part."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(n * fractions[0])
    n_val = int(n * fractions[1])
    return (
        np.sort(order[:n_train]),
        np.sort(order[n_train:n_train + n_val]),
        np.sort(order[n_train + n_val:]),
    )


def adam_step(params: ModelParams, grad_W, grad_b, state: AdamState,
              config: TrainConfig) -> None:
    """One bias-corrected Adam update, applied in place."""
    grad_W = np.asarray(grad_W, dtype=np.float64)
    grad_b = np.asarray(grad_b, dtype=np.float64)
    if not (np.isfinite(grad_W).all() and np.isfinite(grad_b).all()):
        raise NumericalError("non-finite gradients")
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    state.t += 1
    state.m_W = b1 * state.m_W + (1 - b1) * grad_W
    state.v_W = b2 * state.v_W + (1 - b2) * grad_W**2
    state.m_b = b1 * state.m_b + (1 - b1) * grad_b
    state.v_b = b2 * state.v_b + (1 - b2) * grad_b**2
    mhat_W = state.m_W / (1 - b1**state.t)
    vhat_W = state.v_W / (1 - b2**state.t)
    mhat_b = state.m_b / (1 - b1**state.t)
    vhat_b = state.v_b / (1 - b2**state.t)
    params.W -= config.learning_rate * mhat_W / (np.sqrt(vhat_W) + eps)
    params.b -= config.learning_rate * mhat_b / (np.sqrt(vhat_b) + eps)


def _penalty_logit_grad(probs, labels, pen_grad):
    """Chain d(penalty)/d(p_true) into logit space.

    d p_true / d logit_j = p_true * (1[j == y] - p_j), so each record's
    row is coef * (onehot(y) - probs) with coef = pen_grad * p_true.
    """
    n = len(labels)
    coef = pen_grad * probs[np.arange(n), labels]
    G = -coef[:, None] * probs
    G[np.arange(n), labels] += coef
    return G


def train(dataset, embeddings: EmbeddingTable | None, config: TrainConfig,
          split=None) -> TrainResult:
    """Train the classifier with the configured penalty.

    Pipeline: name vectors are computed once (records whose names have no
    embedding coverage are excluded from penalty statistics); the cluster
    penalty clusters the training-split name vectors once up front and
    freezes the assignments; class weights come from the training labels;
    each epoch shuffles with the seeded RNG and applies Adam per batch.
    Identical configs and seeds produce bitwise-identical parameters.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    num_classes = len(dataset.class_names)
    if split is None:
        split = train_val_test_split(n, config.seed)
    train_idx, val_idx, _ = split
    X = dataset.features[train_idx]
    y = dataset.labels[train_idx]

    penalty_on = config.variant != "none" and config.lam > 0
    cluster_model = None
    name_vecs = include = cluster_ids = None
    if penalty_on:
        if embeddings is None:
            raise ValueError("the selected penalty needs an embedding table")
        name_vecs, _, include = batch_name_vectors(
            embeddings, dataset.first_names, dataset.last_names
        )
        name_vecs = name_vecs[train_idx]
        include = include[train_idx]
        if config.variant == "clucl":
            covered = name_vecs[include]
            cluster_model = kmeans(covered, config.k, seed=config.seed)
            cluster_ids = np.zeros(len(train_idx), dtype=np.int64)
            cluster_ids[include] = cluster_model.assignments

    weights = class_weights(np.bincount(y, minlength=num_classes))
    params = ModelParams(
        W=np.zeros((num_classes, dataset.features.shape[1])),
        b=np.zeros(num_classes),
    )
    state = AdamState.zeros(params.num_classes, params.num_features)
    rng = np.random.default_rng(config.seed)
    history: list[EpochRecord] = []
    n_train = len(train_idx)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n_train)
        for start in range(0, n_train, config.batch_size):
            batch = order[start:start + config.batch_size]
            Xb, yb = X[batch], y[batch]
            probs = forward_batch(params, Xb)
            nb = len(batch)
            G = probs.copy()
            G[np.arange(nb), yb] -= 1.0
            G *= weights[yb][:, None] / nb
            if penalty_on:
                inputs = losses.PenaltyInputs(
                    true_label_probs=probs[np.arange(nb), yb],
                    labels=yb,
                    cluster_ids=None if cluster_ids is None else cluster_ids[batch],
                    name_vectors=None if name_vecs is None else name_vecs[batch],
                    include_mask=include[batch],
                )
                pen_grad = losses.penalty_gradient(
                    inputs, config.variant, config.k, num_classes
                )
                G = G + config.lam * _penalty_logit_grad(probs, yb, pen_grad)
            grad_W = G.T @ Xb
            grad_b = G.sum(axis=0)
            if config.l2_coeff:
                grad_W = grad_W + 2.0 * config.l2_coeff * params.W
            adam_step(params, grad_W, grad_b, state, config)

        base, penalty = evaluate_losses(
            params, X, y, weights, config, cluster_ids, name_vecs, include
        )
        total = losses.total_loss(base, penalty, config.lam)
        if not np.isfinite(total):
            raise NumericalError(
                f"non-finite loss at epoch {epoch}: base={base}, penalty={penalty}"
            )
        if len(val_idx):
            val_preds = predict_batch(params, dataset.features[val_idx])
            val_tpr = balanced_tpr(
                val_preds, dataset.labels[val_idx], num_classes,
                require_all_classes=False,
            )
        else:
            val_tpr = float("nan")
        history.append(EpochRecord(epoch, base, penalty, total, val_tpr))

    return TrainResult(
        params=params,
        history=history,
        cluster_model=cluster_model,
        split=split,
    )


def evaluate_losses(params, X, y, weights, config: TrainConfig,
                    cluster_ids=None, name_vecs=None, include=None):
    """Base loss and penalty over a full record set (not batch estimates)."""
    probs = forward_batch(params, X)
    base = weighted_cross_entropy(probs, y, weights)
    if config.variant == "none" or config.lam == 0:
        return base, 0.0
    inputs = losses.PenaltyInputs(
        true_label_probs=probs[np.arange(len(y)), y],
        labels=y,
        cluster_ids=cluster_ids,
        name_vectors=name_vecs,
        include_mask=include,
    )
    num_classes = params.num_classes
    return base, losses.penalty_value(inputs, config.variant, config.k, num_classes)


def write_history_csv(history: list[EpochRecord], path) -> None:
    """Emit the per-epoch training record as CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["epoch", "base_loss", "penalty", "total_loss", "val_balanced_tpr"]
        )
        for rec in history:
            writer.writerow(
                [
                    rec.epoch,
                    repr(rec.base_loss),
                    repr(rec.penalty),
                    repr(rec.total_loss),
                    repr(rec.val_balanced_tpr),
                ]
            )
