"""Binary confusion counts, sensitivity / specificity, and model evaluation.

Malignant (label 1) is the positive class throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import data as D
from .errors import UndefinedMetricError, ValidationError
from .sequencer import predict_proba


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp

    @property
    def total(self) -> int:
        return self.positives + self.negatives

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def _as_classes(values, what: str) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValidationError(f"{what} must be a 1-D sequence of class indices")
    if arr.size and not np.all((arr == 0) | (arr == 1)):
        raise ValidationError(f"{what} must contain only 0 (benign) or 1 (malignant)")
    return arr.astype(np.int64)


def confusion(predictions, labels) -> ConfusionMatrix:
    p = _as_classes(predictions, "predictions")
    y = _as_classes(labels, "labels")
    if p.shape != y.shape:
        raise ValidationError(f"{p.size} predictions vs {y.size} labels")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (y == 1))),
        fp=int(np.sum((p == 1) & (y == 0))),
        tn=int(np.sum((p == 0) & (y == 0))),
        fn=int(np.sum((p == 0) & (y == 1))),
    )


def sensitivity(cm: ConfusionMatrix) -> float:
    """Fraction of malignant cases classified malignant: tp / (tp + fn)."""
    if cm.positives == 0:
        raise UndefinedMetricError("sensitivity is undefined without malignant cases")
    return cm.tp / cm.positives


def specificity(cm: ConfusionMatrix) -> float:
    """Fraction of benign cases classified benign: tn / (tn + fp)."""
    if cm.negatives == 0:
        raise UndefinedMetricError("specificity is undefined without benign cases")
    return cm.tn / cm.negatives


def predict(probabilities: np.ndarray) -> np.ndarray:
    """Argmax class per row; a probability tie resolves to the lower index (benign)."""
    return np.argmax(np.asarray(probabilities), axis=1).astype(np.int64)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionMatrix
    sensitivity: float
    specificity: float
    counts: dict

    @classmethod
    def from_confusion(cls, cm: ConfusionMatrix, split: str = "test") -> "EvalReport":
        counts = {"split": split, "benign": cm.negatives, "malignant": cm.positives, "total": cm.total}
        return cls(cm, sensitivity(cm), specificity(cm), counts)

    @property
    def accuracy(self) -> float:
        cm = self.confusion
        return (cm.tp + cm.tn) / cm.total

    def to_dict(self) -> dict:
        return {
            "confusion": asdict(self.confusion),
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "accuracy": self.accuracy,
            "counts": dict(self.counts),
        }


def evaluate(model, manifest, stats=None, split: str = "test", batch_size: int = 64) -> EvalReport:
    """decode -> resize -> normalize -> forward for every record, then tally.

    Records are processed in manifest order, ``batch_size`` at a time; errors
    from the image pipeline carry the offending path.
    """
    stats = stats or D.IDENTITY_STATS
    _, h, w = model.spec.input_shape
    preds = []
    for start in range(0, len(manifest), batch_size):
        chunk = manifest.subset(range(start, min(start + batch_size, len(manifest))))
        x = D.normalize(D.load_images(chunk, h, w), stats)
        preds.append(predict(predict_proba(model, x)))
    p = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return EvalReport.from_confusion(confusion(p, manifest.labels), split)
