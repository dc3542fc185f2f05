"""Class-balanced losses and frame-level evaluation metrics.

The per-branch loss is a binary cross entropy over AUs whose per-AU weight
is inversely proportional to the AU's occurrence rate, normalized so the
weights sum to the AU count. The total training loss is the plain sum of
the branch losses. Evaluation reports per-AU F1 at a fixed probability
threshold with the 0/0 -> 0 convention throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from augraph.errors import DataError


def occurrence_rates(labels: np.ndarray) -> np.ndarray:
    """Per-AU positive rates of an (N, C) 0/1 matrix.

    An AU that never occurs gets the floor ``1/(2N)`` so that downstream
    inverse-rate weights stay finite.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise DataError(f"labels must be a non-empty (N, C) matrix, got {labels.shape}")
    n = labels.shape[0]
    rates = labels.astype(np.float64).mean(axis=0)
    return np.where(rates > 0, rates, 1.0 / (2.0 * n))


@dataclass(frozen=True)
class ClassWeights:
    """Inverse-rate AU weights, normalized to sum to the AU count."""

    weights: np.ndarray
    rates: np.ndarray

    def tensor(self, dtype: torch.dtype = torch.float32) -> torch.Tensor:
        return torch.as_tensor(self.weights, dtype=dtype)


def class_weights(rates: np.ndarray) -> ClassWeights:
    """Weights ``w_i = (1/r_i) * C / sum_j(1/r_j)`` from occurrence rates."""
    rates = np.asarray(rates, dtype=np.float64)
    if rates.ndim != 1 or rates.size == 0:
        raise DataError(f"rates must be a non-empty vector, got shape {rates.shape}")
    if (rates <= 0).any() or (rates > 1).any():
        raise DataError("rates must lie in (0, 1]")
    inv = 1.0 / rates
    return ClassWeights(weights=inv * rates.size / inv.sum(), rates=rates)


def weighted_bce(
    logits: torch.Tensor, targets: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Weighted binary cross entropy over AUs, averaged over the batch.

    Computed in the numerically stable form
    ``l = max(z, 0) - z*y + log(1 + exp(-|z|))`` so confident logits never
    overflow. ``logits`` and ``targets`` are (..., C); ``weights`` is (C,).
    """
    targets = targets.to(logits.dtype)
    if logits.shape != targets.shape:
        raise DataError(
            f"logit/target shape mismatch: {tuple(logits.shape)} vs {tuple(targets.shape)}"
        )
    weights = torch.as_tensor(weights, dtype=logits.dtype).reshape(-1)
    if weights.shape[0] != logits.shape[-1]:
        raise DataError(
            f"expected {logits.shape[-1]} class weights, got {weights.shape[0]}"
        )
    z = logits
    per_element = z.clamp(min=0.0) - z * targets + torch.log1p(torch.exp(-z.abs()))
    per_sample = (per_element * weights).mean(dim=-1)
    return per_sample.mean()


def total_loss(
    global_logits: torch.Tensor | None,
    level_logits: list[torch.Tensor] | None,
    targets: torch.Tensor,
    weights: torch.Tensor,
) -> torch.Tensor:
    """Sum of the weighted BCE over every branch present."""
    branches = []
    if global_logits is not None:
        branches.append(global_logits)
    if level_logits:
        branches.extend(level_logits)
    if not branches:
        raise DataError("total_loss needs at least one prediction branch")
    loss = weighted_bce(branches[0], targets, weights)
    for branch in branches[1:]:
        loss = loss + weighted_bce(branch, targets, weights)
    return loss


@dataclass
class EvalReport:
    """Per-AU detection quality at a fixed threshold."""

    per_au_f1: list[float]
    mean_f1: float
    precision: list[float]
    recall: list[float]
    true_pos: list[int]
    false_pos: list[int]
    false_neg: list[int]
    true_neg: list[int]
    threshold: float = 0.5
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "mean_f1": self.mean_f1,
            "per_au_f1": self.per_au_f1,
            "precision": self.precision,
            "recall": self.recall,
            "true_pos": self.true_pos,
            "false_pos": self.false_pos,
            "false_neg": self.false_neg,
            "true_neg": self.true_neg,
            "threshold": self.threshold,
        }
        out.update(self.extras)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def f1_frame(
    probabilities: np.ndarray, labels: np.ndarray, threshold: float = 0.5
) -> EvalReport:
    """Frame-level F1 per AU and its mean over AUs.

    Predictions are ``probability >= threshold``. Precision, recall and F1
    all use the 0/0 -> 0 convention, so an AU with no positive predictions
    and no positive labels scores 0.
    """
    probs = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape != labels.shape or probs.ndim != 2:
        raise DataError(
            f"predictions and labels must be matching (N, C) matrices, got "
            f"{probs.shape} and {labels.shape}"
        )
    if (probs < 0).any() or (probs > 1).any():
        raise DataError("probabilities must lie in [0, 1]")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be binary (0/1)")
    pred = probs >= threshold
    truth = labels.astype(bool)
    tp = (pred & truth).sum(axis=0)
    fp = (pred & ~truth).sum(axis=0)
    fn = (~pred & truth).sum(axis=0)
    tn = (~pred & ~truth).sum(axis=0)

    def safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
        out = np.zeros(num.shape, dtype=np.float64)
        np.divide(num, den, out=out, where=den > 0)
        return out

    precision = safe_div(tp, tp + fp)
    recall = safe_div(tp, tp + fn)
    f1 = safe_div(2 * precision * recall, precision + recall)
    return EvalReport(
        per_au_f1=f1.tolist(),
        mean_f1=float(f1.mean()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        true_pos=tp.tolist(),
        false_pos=fp.tolist(),
        false_neg=fn.tolist(),
        true_neg=tn.tolist(),
        threshold=threshold,
    )
