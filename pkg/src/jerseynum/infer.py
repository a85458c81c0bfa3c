"""Prediction for both heads, the two-model ensemble, and evaluation metrics.

The multi-class head predicts the argmax of its softmax; the multi-label head
thresholds its 21 sigmoid scores and decodes digits to a class. The ensemble
rule is pluggable; the default ("mc_first") trusts the multi-class prediction
when its confidence clears the threshold and otherwise falls back to the
multi-label decode. Every evaluation report records which rule produced it.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import (
    DataError,
    DatasetManifest,
    NUM_CLASSES,
    UNRECOGNIZABLE,
    decode_multilabel,
)
from .imaging import Image, from_float, load_png, resize_bilinear, save_png
from .nn import MULTICLASS_HEAD, MULTILABEL_HEAD, ShapeMismatchError, SmallCnn, sigmoid, softmax

ENSEMBLE_RULES = ("mc_first", "confidence_max", "agreement")

DEFAULT_LOW_FREQ_SUPPORT = 50


@dataclass(frozen=True)
class Prediction:
    label: int
    confidence: float
    source: str

    def __post_init__(self):
        if not (0 <= self.label <= UNRECOGNIZABLE):
            raise ValueError(f"label {self.label} outside [0, {UNRECOGNIZABLE}]")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def _as_batch(model: SmallCnn, img: Image) -> np.ndarray:
    s = model.config.input_size
    resized = resize_bilinear(img, s, s)
    return resized.pixels.transpose(2, 0, 1).astype(np.float32)[None] / 255.0


def predict_multiclass(model: SmallCnn, img: Image) -> Prediction:
    """Highest-softmax-score class of the 101-way head."""
    if model.config.head != MULTICLASS_HEAD:
        raise ShapeMismatchError(f"multiclass prediction needs a {MULTICLASS_HEAD}-way head")
    probs = softmax(model.forward(_as_batch(model, img)).data)[0]
    label = int(np.argmax(probs))
    return Prediction(label, float(probs[label]), "multiclass")


def predict_multilabel(model: SmallCnn, img: Image, threshold: float = 0.5) -> Prediction:
    """Thresholded digit-wise decode of the 21-way head."""
    if model.config.head != MULTILABEL_HEAD:
        raise ShapeMismatchError(f"multilabel prediction needs a {MULTILABEL_HEAD}-way head")
    scores = sigmoid(model.forward(_as_batch(model, img)).data)[0]
    label, conf = decode_multilabel(scores, threshold)
    return Prediction(label, conf, "multilabel")


def ensemble(
    mc: Prediction, ml: Prediction, threshold: float = 0.5, rule: str = "mc_first"
) -> Prediction:
    """Combine the two heads' predictions for one image.

    mc_first: keep the multi-class answer when it clears the threshold,
    otherwise take any number the multi-label head found, otherwise class
    100 at the larger of the two confidences.
    """
    if rule not in ENSEMBLE_RULES:
        raise ValueError(f"unknown ensemble rule {rule!r}; choose from {ENSEMBLE_RULES}")
    if rule == "confidence_max":
        best = mc if mc.confidence >= ml.confidence else ml
        return Prediction(best.label, best.confidence, "ensemble")
    if rule == "agreement" and mc.label == ml.label:
        return Prediction(mc.label, max(mc.confidence, ml.confidence), "ensemble")
    # mc_first (also the fallback of the agreement rule)
    if mc.confidence >= threshold:
        return Prediction(mc.label, mc.confidence, "ensemble")
    if ml.label != UNRECOGNIZABLE:
        return Prediction(ml.label, ml.confidence, "ensemble")
    return Prediction(UNRECOGNIZABLE, max(mc.confidence, ml.confidence), "ensemble")


@dataclass
class EvalReport:
    rule: str
    threshold: float
    total: int
    accuracy: dict[str, float]
    agreement_rate: float
    per_class_accuracy: dict[int, float | None]
    confusion: np.ndarray  # (101, 101) ensemble counts, rows = true class
    low_frequency: dict | None = None
    per_head_confusion: dict[str, np.ndarray] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rule": self.rule,
            "threshold": self.threshold,
            "total": self.total,
            "accuracy": {k: float(v) for k, v in self.accuracy.items()},
            "agreement_rate": float(self.agreement_rate),
            "per_class_accuracy": {
                str(k): (None if v is None else float(v))
                for k, v in sorted(self.per_class_accuracy.items())
            },
            "low_frequency": self.low_frequency,
            "confusion": self.confusion.astype(int).tolist(),
        }


def _batched_scores(model: SmallCnn, images: list[Image], batch_size: int) -> np.ndarray:
    s = model.config.input_size
    rows = []
    for start in range(0, len(images), batch_size):
        chunk = images[start : start + batch_size]
        x = np.stack(
            [
                resize_bilinear(img, s, s).pixels.transpose(2, 0, 1).astype(np.float32) / 255.0
                for img in chunk
            ]
        )
        rows.append(model.forward(x).data)
    return np.concatenate(rows, axis=0)


def evaluate(
    mc_model: SmallCnn,
    ml_model: SmallCnn,
    test: DatasetManifest,
    threshold: float = 0.5,
    rule: str = "mc_first",
    batch_size: int = 64,
    train_support: dict[int, int] | None = None,
    low_freq_support: int = DEFAULT_LOW_FREQ_SUPPORT,
) -> EvalReport:
    """Run both heads and the ensemble over a test manifest.

    ``train_support`` (class -> number of training records) enables the
    low-frequency slice: accuracy restricted to classes whose training
    support is below ``low_freq_support``.
    """
    if not test.records:
        raise DataError("test manifest is empty")
    images = []
    for rec in test.records:
        try:
            images.append(load_png(test.resolve(rec)))
        except FileNotFoundError as exc:
            raise DataError(f"missing image: {exc}") from exc
    truth = np.array([rec.label for rec in test.records])

    mc_probs = softmax(_batched_scores(mc_model, images, batch_size))
    mc_labels = mc_probs.argmax(axis=1)
    mc_conf = mc_probs[np.arange(len(images)), mc_labels]

    ml_scores = sigmoid(_batched_scores(ml_model, images, batch_size))
    ml_decoded = [decode_multilabel(s, threshold) for s in ml_scores]
    ml_labels = np.array([d[0] for d in ml_decoded])
    ml_conf = np.array([d[1] for d in ml_decoded])

    ens_labels = np.empty(len(images), dtype=int)
    for i in range(len(images)):
        mc_p = Prediction(int(mc_labels[i]), float(mc_conf[i]), "multiclass")
        ml_p = Prediction(int(ml_labels[i]), float(ml_conf[i]), "multilabel")
        ens_labels[i] = ensemble(mc_p, ml_p, threshold, rule).label

    def confusion_of(pred: np.ndarray) -> np.ndarray:
        m = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
        np.add.at(m, (truth, pred), 1)
        return m

    confusion = confusion_of(ens_labels)
    accuracy = {
        "multiclass": float((mc_labels == truth).mean()),
        "multilabel": float((ml_labels == truth).mean()),
        "ensemble": float((ens_labels == truth).mean()),
    }
    per_class: dict[int, float | None] = {}
    for c in range(NUM_CLASSES):
        mask = truth == c
        per_class[c] = float((ens_labels[mask] == c).mean()) if mask.any() else None

    low_frequency = None
    if train_support is not None:
        low_classes = sorted(
            c for c in set(truth.tolist()) if train_support.get(c, 0) < low_freq_support
        )
        mask = np.isin(truth, low_classes)
        if mask.any():
            low_frequency = {
                "support_threshold": low_freq_support,
                "classes": low_classes,
                "count": int(mask.sum()),
                "accuracy": {
                    "multiclass": float((mc_labels[mask] == truth[mask]).mean()),
                    "multilabel": float((ml_labels[mask] == truth[mask]).mean()),
                    "ensemble": float((ens_labels[mask] == truth[mask]).mean()),
                },
            }

    return EvalReport(
        rule=rule,
        threshold=threshold,
        total=len(images),
        accuracy=accuracy,
        agreement_rate=float((mc_labels == ml_labels).mean()),
        per_class_accuracy=per_class,
        confusion=confusion,
        low_frequency=low_frequency,
        per_head_confusion={
            "multiclass": confusion_of(mc_labels),
            "multilabel": confusion_of(ml_labels),
        },
    )


def confusion_to_csv(matrix: np.ndarray, path: str | os.PathLike) -> None:
    """Plain 101x101 integer CSV, rows = true class, columns = predicted."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in np.asarray(matrix, dtype=int):
            writer.writerow(row.tolist())


def confusion_heatmap(matrix: np.ndarray, path: str | os.PathLike, cell: int = 4) -> None:
    """Row-normalized heatmap PNG (dark blue = 0, yellow = 1), no plotting deps."""
    m = np.asarray(matrix, dtype=np.float64)
    rows = m.sum(axis=1, keepdims=True)
    norm = np.divide(m, rows, out=np.zeros_like(m), where=rows > 0)
    lo = np.array([18.0, 20.0, 80.0])
    hi = np.array([250.0, 220.0, 40.0])
    rgb = lo + norm[..., None] * (hi - lo)
    big = np.kron(rgb, np.ones((cell, cell, 1)))
    save_png(from_float(big), path)
