"""Classification metrics for ordinal and nominal labels.

Conventions: a class with no predicted positives has precision 0; F1 is 0
when precision + recall is 0; classes absent from both the true and the
predicted labels are left out of macro averages (with a warning).
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .engine import Tensor, no_grad, softmax


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    """K x K counts, rows indexed by the true class."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ValueError(f"true/pred lengths differ: {true.shape} vs {pred.shape}")
    for name, arr in (("true", true), ("pred", pred)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise ValueError(f"{name} labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def accuracy(confusion: np.ndarray) -> float:
    total = confusion.sum()
    if total == 0:
        raise ValueError("accuracy of an empty confusion matrix")
    return float(np.trace(confusion) / total)


def precision_recall_f1(confusion: np.ndarray) -> dict:
    confusion = np.asarray(confusion)
    if confusion.sum() == 0:
        raise ValueError("metrics need at least one sample")
    tp = np.diag(confusion).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    actual = confusion.sum(axis=1).astype(np.float64)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros_like(tp), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    present = (predicted > 0) | (actual > 0)
    if not present.all():
        warnings.warn(f"classes {np.flatnonzero(~present).tolist()} absent from true and pred; "
                      "excluded from macro averages", stacklevel=2)
    return {
        "precision": precision.tolist(),
        "recall": recall.tolist(),
        "f1": f1.tolist(),
        "macro_precision": float(precision[present].mean()),
        "macro_recall": float(recall[present].mean()),
        "macro_f1": float(f1[present].mean()),
    }


def qwk(true, pred, num_classes: int) -> float:
    """Quadratic weighted kappa with weights (i - j)^2 / (K - 1)^2."""
    observed = confusion_matrix(true, pred, num_classes).astype(np.float64)
    n = observed.sum()
    if n == 0:
        raise ValueError("qwk needs at least one sample")
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    idx = np.arange(num_classes)
    weights = (idx[:, None] - idx[None, :]) ** 2 / float((num_classes - 1) ** 2)
    denom = float((weights * expected).sum())
    if denom == 0.0:
        warnings.warn("qwk undefined (all mass on one class); returning 1.0", stacklevel=2)
        return 1.0
    return float(1.0 - (weights * observed).sum() / denom)


def mae(true, pred) -> float:
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape or true.size == 0:
        raise ValueError("mae needs equal-length, non-empty label arrays")
    return float(np.abs(true - pred).mean())


def binary_auc(scores, positive) -> float:
    """ROC AUC via the Mann-Whitney rank statistic; ties get midranks."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = positive.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative samples")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_macro_ovr(scores, true) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    true = np.asarray(true, dtype=np.int64)
    if scores.ndim != 2 or scores.shape[0] != true.shape[0]:
        raise ValueError(f"scores must be (N, K) matching {true.shape[0]} labels, got {scores.shape}")
    if scores.shape[0] < 2:
        raise ValueError("AUC needs at least 2 samples")
    values, skipped = [], []
    for k in range(scores.shape[1]):
        positive = true == k
        if positive.all() or not positive.any():
            skipped.append(k)
            continue
        values.append(binary_auc(scores[:, k], positive))
    if not values:
        raise ValueError("AUC undefined: every sample has the same label")
    if skipped:
        warnings.warn(f"AUC undefined for classes {skipped}; excluded from macro average", stacklevel=2)
    return float(np.mean(values))


@dataclass
class EvalReport:
    accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    qwk: float
    mae: float
    auc: float | None
    confusion: list[list[int]]
    num_samples: int

    def to_dict(self) -> dict:
        return asdict(self)


def report_from_predictions(true, pred, scores, num_classes: int) -> EvalReport:
    cm = confusion_matrix(true, pred, num_classes)
    prf = precision_recall_f1(cm)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            auc = auc_macro_ovr(scores, true)
    except ValueError:
        auc = None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        kappa = qwk(true, pred, num_classes)
    return EvalReport(
        accuracy=accuracy(cm),
        precision=prf["precision"],
        recall=prf["recall"],
        f1=prf["f1"],
        macro_precision=prf["macro_precision"],
        macro_recall=prf["macro_recall"],
        macro_f1=prf["macro_f1"],
        qwk=kappa,
        mae=mae(true, pred),
        auc=auc,
        confusion=cm.tolist(),
        num_samples=int(cm.sum()),
    )


def predict(model, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Class probabilities from a single eval-mode pass (hard masks)."""
    was_training = model.training
    model.eval()
    dtype = model.parameters()[0].dtype
    chunks = []
    try:
        with no_grad():
            for start in range(0, images.shape[0], batch_size):
                batch = Tensor(images[start:start + batch_size].astype(dtype))
                chunks.append(softmax(model(batch), axis=-1).data)
    finally:
        model.train(was_training)
    return np.concatenate(chunks, axis=0)


def evaluate(model, dataset, batch_size: int = 64) -> EvalReport:
    num_classes = model.cfg.num_classes
    if num_classes != dataset.num_classes:
        raise ValueError(f"model predicts {num_classes} classes, dataset has {dataset.num_classes}")
    probs = predict(model, dataset.images, batch_size)
    pred = probs.argmax(axis=1)
    return report_from_predictions(dataset.labels, pred, probs, num_classes)
