"""Curriculum training: staged pretraining and finetuning with best-epoch selection.

A curriculum is an ordered list of stages (for the paper-style regime:
Simple2D, then Complex2D, then the real or proxy dataset); each stage starts
from the previous stage's selected parameters. Within a stage the loader
re-augments every record each epoch with a seed derived from (global seed,
epoch, record index), so duplicated records never show the model the same
pixels twice, yet the whole run replays exactly under the same seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugPolicy, AugSeed, apply_policy
from .datasets import (
    DataError,
    DatasetManifest,
    NUM_CLASSES,
    decode_multilabel,
    encode_multilabel,
)
from .imaging import Image, load_png, resize_bilinear
from .nn import SGD, CnnConfig, SmallCnn, bce_loss, cosine_lr, cross_entropy_loss, sigmoid

OBJECTIVES = ("multiclass", "multilabel")
_HEAD_FOR = {"multiclass": 101, "multilabel": 21}

# seed-path tags local to the training subsystem
_TAG_ORDER = 201
_TAG_AUG = 202
_TAG_VAL = 203
_TAG_STAGE = 204

_ML_TABLE = np.stack([encode_multilabel(c) for c in range(NUM_CLASSES)])


class DivergedError(Exception):
    """Training loss went NaN/Inf."""


class HeadMismatchError(Exception):
    """Stage objective incompatible with the model head."""


@dataclass(frozen=True)
class StageConfig:
    name: str
    manifest: DatasetManifest
    objective: str
    epochs: int = 10
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    cosine_decay: bool = True
    policy: AugPolicy | None = None
    val_fraction: float = 0.1
    early_stop: int | None = None
    threshold: float = 0.5

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ValueError("val_fraction must be in [0, 1)")


@dataclass
class TrainReport:
    stage: str
    objective: str
    epochs_run: int
    train_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    selected_epoch: int = 0
    selected_val_acc: float = 0.0
    wall_clock_s: float = 0.0
    seed: tuple[int, tuple[int, ...]] = (0, ())

    def to_dict(self, drop_timing: bool = False) -> dict:
        d = {
            "stage": self.stage,
            "objective": self.objective,
            "epochs_run": self.epochs_run,
            "train_loss": [float(x) for x in self.train_loss],
            "val_acc": [float(x) for x in self.val_acc],
            "selected_epoch": self.selected_epoch,
            "selected_val_acc": float(self.selected_val_acc),
            "seed": {"root": self.seed[0], "path": list(self.seed[1])},
        }
        if not drop_timing:
            d["wall_clock_s"] = self.wall_clock_s
        return d


class DynamicLoader:
    """Epoch-shuffled batch stream with per-epoch fresh augmentation.

    Decoded base images are cached across epochs; augmentation seeds depend
    only on (global seed, epoch, record index), so repeats of a duplicated
    record differ within and across epochs while staying reproducible.
    """

    def __init__(
        self,
        manifest: DatasetManifest,
        input_size: int,
        batch_size: int,
        policy: AugPolicy | None,
        seed: AugSeed,
    ):
        if not manifest.records:
            raise DataError("empty manifest")
        self.manifest = manifest
        self.input_size = input_size
        self.batch_size = batch_size
        self.policy = policy
        self.seed = seed
        self._cache: dict[str, Image] = {}

    def _base_image(self, path: str) -> Image:
        img = self._cache.get(path)
        if img is None:
            try:
                img = load_png(Path(self.manifest.root) / path)
            except FileNotFoundError as exc:
                raise DataError(f"missing image: {exc}") from exc
            self._cache[path] = img
        return img

    def materialize(self, index: int, epoch: int) -> np.ndarray:
        """(3, S, S) float32 in [0, 1] for one record at one epoch."""
        rec = self.manifest.records[index]
        img = self._base_image(rec.path)
        if self.policy is not None:
            img = apply_policy(img, self.policy, self.seed.split(_TAG_AUG, epoch, index))
        img = resize_bilinear(img, self.input_size, self.input_size)
        return img.pixels.transpose(2, 0, 1).astype(np.float32) / 255.0

    def epoch_batches(self, epoch: int):
        """Yield (batch, labels) with a per-epoch shuffled record order."""
        order = self.seed.split(_TAG_ORDER, epoch).rng().permutation(len(self.manifest))
        for start in range(0, len(order), self.batch_size):
            chunk = order[start : start + self.batch_size]
            x = np.stack([self.materialize(int(i), epoch) for i in chunk])
            labels = np.array([self.manifest.records[int(i)].label for i in chunk])
            yield x, labels


def _stage_val_split(
    manifest: DatasetManifest, fraction: float, seed: AugSeed
) -> tuple[DatasetManifest, DatasetManifest]:
    """Per-class holdout for epoch selection; classes with one record stay in train."""
    if fraction <= 0:
        return manifest, manifest
    train_idx: list[int] = []
    val_idx: list[int] = []
    index_by_class: dict[int, list[int]] = {}
    for i, r in enumerate(manifest.records):
        index_by_class.setdefault(r.label, []).append(i)
    for label in sorted(index_by_class):
        idx = index_by_class[label]
        n_val = int(np.floor(fraction * len(idx)))
        if len(idx) - n_val < 1:
            n_val = len(idx) - 1
        order = seed.split(_TAG_VAL, label).rng().permutation(len(idx))
        val_idx.extend(idx[i] for i in order[:n_val])
        train_idx.extend(idx[i] for i in order[n_val:])
    if not val_idx:  # too little data to hold anything out
        return manifest, manifest
    train = DatasetManifest(manifest.root, [manifest.records[i] for i in sorted(train_idx)])
    val = DatasetManifest(manifest.root, [manifest.records[i] for i in sorted(val_idx)])
    return train, val


def evaluate_accuracy(
    model: SmallCnn,
    manifest: DatasetManifest,
    objective: str,
    threshold: float = 0.5,
    batch_size: int = 64,
) -> float:
    """Plain accuracy of one head over a manifest (no augmentation)."""
    loader = DynamicLoader(manifest, model.config.input_size, batch_size, None, AugSeed(0))
    correct = 0
    for start in range(0, len(manifest), batch_size):
        idx = range(start, min(start + batch_size, len(manifest)))
        x = np.stack([loader.materialize(i, 0) for i in idx])
        labels = np.array([manifest.records[i].label for i in idx])
        z = model.forward(x).data
        if objective == "multiclass":
            pred = z.argmax(axis=1)
        else:
            probs = sigmoid(z)
            pred = np.array([decode_multilabel(p, threshold)[0] for p in probs])
        correct += int((pred == labels).sum())
    return correct / len(manifest)


def train_stage(model: SmallCnn, stage: StageConfig, seed: AugSeed) -> TrainReport:
    """Train one stage; the model ends up holding the best-epoch parameters.

    Epoch selection uses held-out validation accuracy (ties go to the
    earliest epoch); the optional early stop fires after ``early_stop``
    epochs without improvement.
    """
    if model.config.head != _HEAD_FOR[stage.objective]:
        raise HeadMismatchError(
            f"stage {stage.name!r} objective {stage.objective} needs head "
            f"{_HEAD_FOR[stage.objective]}, model has {model.config.head}"
        )
    started = time.perf_counter()
    train_m, val_m = _stage_val_split(stage.manifest, stage.val_fraction, seed)
    loader = DynamicLoader(
        train_m, model.config.input_size, stage.batch_size, stage.policy, seed
    )
    opt = SGD(model.params, stage.lr, stage.momentum)
    report = TrainReport(
        stage=stage.name,
        objective=stage.objective,
        epochs_run=0,
        seed=(seed.root, seed.path),
    )
    best_state = model.state_dict()
    best_acc = -1.0
    best_epoch = 0
    for epoch in range(stage.epochs):
        if stage.cosine_decay:
            opt.lr = cosine_lr(stage.lr, epoch, stage.epochs)
        epoch_losses = []
        for x, labels in loader.epoch_batches(epoch):
            model.zero_grad()
            z = model.forward(x)
            if stage.objective == "multiclass":
                loss = cross_entropy_loss(z, labels)
            else:
                loss = bce_loss(z, _ML_TABLE[labels])
            value = float(loss.data)
            if not np.isfinite(value):
                raise DivergedError(f"stage {stage.name!r} epoch {epoch}: loss={value}")
            loss.backward()
            opt.step()
            epoch_losses.append(value)
        report.train_loss.append(float(np.mean(epoch_losses)))
        acc = evaluate_accuracy(model, val_m, stage.objective, stage.threshold)
        report.val_acc.append(acc)
        report.epochs_run = epoch + 1
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best_state = model.state_dict()
        elif stage.early_stop is not None and epoch - best_epoch >= stage.early_stop:
            break
    model.load_state_dict(best_state)
    report.selected_epoch = best_epoch
    report.selected_val_acc = best_acc
    report.wall_clock_s = time.perf_counter() - started
    return report


def run_curriculum(
    config: CnnConfig,
    stages: list[StageConfig],
    seed: AugSeed,
    model: SmallCnn | None = None,
    on_stage=None,
) -> tuple[SmallCnn, list[TrainReport]]:
    """Train the stages in order, chaining selected parameters between them.

    Pass an existing ``model`` to continue from its parameters (resume)
    instead of initializing fresh ones from ``config``. ``on_stage`` is
    called as ``on_stage(index, stage, model, report)`` after each stage,
    before the next one starts (checkpointing hook).
    """
    if not stages:
        raise ValueError("curriculum needs at least one stage")
    heads = {_HEAD_FOR[s.objective] for s in stages}
    if len(heads) != 1 or config.head not in heads:
        raise HeadMismatchError(
            f"stages want heads {sorted(heads)}, model config has {config.head}"
        )
    if model is None:
        model = SmallCnn(config)
    elif model.config.head != config.head:
        raise HeadMismatchError(
            f"resumed model head {model.config.head} != configured head {config.head}"
        )
    reports = []
    for i, stage in enumerate(stages):
        report = train_stage(model, stage, seed.split(_TAG_STAGE, i))
        reports.append(report)
        if on_stage is not None:
            on_stage(i, stage, model, report)
    return model, reports
