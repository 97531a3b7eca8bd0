"""Training objective: overlap (dice) loss plus the graph regularizers."""

from __future__ import annotations

import numpy as np

from .errors import DataError
from .tensor import Tensor


def one_hot(labels: np.ndarray, num_classes: int, ignore_index: int | None = None) -> np.ndarray:
    """(N,) class indices -> (N, C) one-hot float rows; ignored rows are all-zero."""
    labels = np.asarray(labels).reshape(-1)
    out = np.zeros((labels.size, num_classes), dtype=np.float64)
    if ignore_index is not None:
        keep = labels != ignore_index
    else:
        keep = np.ones(labels.size, dtype=bool)
    valid = labels[keep]
    if valid.size and (valid.min() < 0 or valid.max() >= num_classes):
        raise DataError(
            f"label values must lie in [0, {num_classes - 1}], got range "
            f"[{valid.min()}, {valid.max()}]"
        )
    out[np.flatnonzero(keep), valid] = 1.0
    return out


def dice_loss(probs: Tensor, target_one_hot: np.ndarray) -> Tensor:
    """1 - mean_i [2 * sum_j y_ij p_ij / (sum_j y_ij + sum_j p_ij)] over labeled rows.

    ``probs`` rows must be probability vectors (softmax outputs); all-zero
    target rows are treated as unlabeled and excluded from the mean.
    """
    if probs.data.ndim != 2 or probs.shape != target_one_hot.shape:
        raise DataError(
            f"probabilities {probs.shape} and one-hot targets {target_one_hot.shape} "
            "must be matching (N, C) matrices"
        )
    target = np.asarray(target_one_hot, dtype=probs.dtype)
    labeled = float(target.sum())
    if labeled == 0:
        raise DataError("dice loss needs at least one labeled row")
    y = Tensor(target)
    overlap = (probs * y).sum(axis=-1) * 2.0
    size = probs.sum(axis=-1) + Tensor(target.sum(axis=-1))
    per_row = overlap / size
    return 1.0 - per_row.sum() / labeled


def total_loss(dice: Tensor, kl: Tensor | None, diag: Tensor | None,
               use_kl: bool = True, use_diag: bool = True) -> Tensor:
    """Sum of the enabled terms; disabled or absent regularizers contribute 0."""
    total = dice
    if use_kl and kl is not None:
        total = total + kl
    if use_diag and diag is not None:
        total = total + diag
    return total
