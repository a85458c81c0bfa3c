"""Dataset manifests, label encodings, class balancing, and deterministic splits.

A manifest is an ordered list of records binding image files (relative to a
root directory) to a jersey-number class in [0, 100], plus provenance. The
JSON-lines file format is shared by every generator and consumer in the
package; unknown fields on a record survive a read/write round trip.

Class 100 means "no recognizable number". The multi-label encoding uses 21
indicators: left digit 0-9 at indices 0-9, right digit 0-9 at indices 10-19,
unrecognizable at index 20. Single-digit numbers set only the right digit, so
"left set, right unset" never encodes a valid class and decodes to 100.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePosixPath

import numpy as np

from .augment import AugSeed

UNRECOGNIZABLE = 100
NUM_CLASSES = 101
MULTILABEL_DIM = 21
_UNREC_INDEX = 20


class ParseError(Exception):
    """Malformed manifest or keypoint line; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class DataError(Exception):
    """A manifest record points at data that cannot be loaded."""


class EmptyClassError(Exception):
    """Balancing needs at least one record per class."""


class InsufficientClassError(Exception):
    """A class has too few distinct images to stratify across all splits."""


def digits_for(label: int) -> tuple[int | None, int | None]:
    """(left, right) digits for a class; None entries where a digit is absent."""
    if not (0 <= label <= UNRECOGNIZABLE):
        raise ValueError(f"class {label} outside [0, {UNRECOGNIZABLE}]")
    if label == UNRECOGNIZABLE:
        return (None, None)
    if label < 10:
        return (None, label)
    return divmod(label, 10)


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: int
    digits: tuple[int | None, int | None] | None = None
    source: str | None = None
    policy: str | None = None
    seed: tuple[int, ...] | None = None
    dup: bool = False
    extra: dict = field(default_factory=dict, compare=True)

    def __post_init__(self):
        if not (0 <= self.label <= UNRECOGNIZABLE):
            raise ValueError(f"class {self.label} outside [0, {UNRECOGNIZABLE}]")
        if self.digits is not None and tuple(self.digits) != digits_for(self.label):
            raise ValueError(
                f"digits {self.digits} inconsistent with class {self.label}"
            )
        p = PurePosixPath(self.path)
        if p.is_absolute() or ".." in p.parts:
            raise ValueError(f"record path must stay under the manifest root: {self.path}")

    def to_dict(self) -> dict:
        d: dict = {"path": self.path, "class": self.label}
        d["digits"] = list(self.digits) if self.digits is not None else None
        d["source"] = self.source
        d["policy"] = self.policy
        d["seed"] = list(self.seed) if self.seed is not None else None
        if self.dup:
            d["dup"] = True
        d.update(self.extra)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRecord":
        known = {"path", "class", "digits", "source", "policy", "seed", "dup"}
        digits = d.get("digits")
        seed = d.get("seed")
        return cls(
            path=d["path"],
            label=d["class"],
            digits=tuple(digits) if digits is not None else None,
            source=d.get("source"),
            policy=d.get("policy"),
            seed=tuple(seed) if seed is not None else None,
            dup=bool(d.get("dup", False)),
            extra={k: v for k, v in d.items() if k not in known},
        )


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, record: ManifestRecord) -> Path:
        return Path(self.root) / record.path

    def class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for r in self.records:
            counts[r.label] = counts.get(r.label, 0) + 1
        return counts

    def by_class(self) -> dict[int, list[ManifestRecord]]:
        out: dict[int, list[ManifestRecord]] = {}
        for r in self.records:
            out.setdefault(r.label, []).append(r)
        return out


def write_manifest(m: DatasetManifest, path: str | os.PathLike | None = None) -> Path:
    """Write JSON lines; default location is ``<root>/manifest.jsonl``."""
    path = Path(path) if path is not None else Path(m.root) / "manifest.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for rec in m.records:
            fh.write(json.dumps(rec.to_dict(), separators=(",", ":")) + "\n")
    return path


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    """Read a JSON-lines manifest; the root is the file's directory."""
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
                if not isinstance(d, dict):
                    raise ValueError("record must be a JSON object")
                rec = ManifestRecord.from_dict(d)
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: line {lineno}: {exc}", line=lineno) from exc
            records.append(rec)
    return DatasetManifest(root=path.parent, records=records)


def encode_multilabel(label: int) -> np.ndarray:
    """Class in [0, 100] to a crisp 21-dim indicator vector (float32)."""
    left, right = digits_for(label)  # validates the range
    vec = np.zeros(MULTILABEL_DIM, dtype=np.float32)
    if label == UNRECOGNIZABLE:
        vec[_UNREC_INDEX] = 1.0
        return vec
    if left is not None:
        vec[left] = 1.0
    vec[10 + right] = 1.0
    return vec


def decode_multilabel(scores: np.ndarray, threshold: float = 0.5) -> tuple[int, float]:
    """Thresholded decode of 21 per-digit probabilities to (class, confidence).

    The left and right digit groups are argmaxed independently (first index
    wins exact ties). Confidence is the mean of the scores the decision used.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (MULTILABEL_DIM,):
        raise ValueError(f"expected {MULTILABEL_DIM} scores, got shape {scores.shape}")
    if scores.min() < 0 or scores.max() > 1:
        raise ValueError("scores must lie in [0, 1]")
    left = int(np.argmax(scores[:10]))
    right = int(np.argmax(scores[10:20]))
    left_max = float(scores[left])
    right_max = float(scores[10 + right])
    unrec = float(scores[_UNREC_INDEX])
    if unrec >= threshold and unrec >= max(left_max, right_max):
        return UNRECOGNIZABLE, unrec
    if right_max >= threshold and left_max >= threshold:
        return 10 * left + right, (left_max + right_max) / 2.0
    if right_max >= threshold:
        return right, right_max
    return UNRECOGNIZABLE, unrec


def balance_upsample(m: DatasetManifest, target: int, seed: AugSeed) -> DatasetManifest:
    """Duplicate records of under-populated classes up to exactly ``target``.

    Originals are never removed or relabeled; duplicates carry ``dup=True``
    so loaders know fresh augmentation (not the file bytes) makes them
    distinct. Duplication is round-robin; the remainder is drawn by a seeded
    shuffle. Classes at or above ``target`` pass through unchanged.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    if not m.records:
        raise EmptyClassError("manifest has no records to balance")
    duplicates: list[ManifestRecord] = []
    grouped = m.by_class()
    for label in sorted(grouped):
        recs = grouped[label]
        need = target - len(recs)
        if need <= 0:
            continue
        rounds, rem = divmod(need, len(recs))
        for _ in range(rounds):
            duplicates.extend(replace(r, dup=True) for r in recs)
        if rem:
            perm = seed.split(label).rng().permutation(len(recs))[:rem]
            duplicates.extend(replace(recs[i], dup=True) for i in sorted(perm))
    return DatasetManifest(root=m.root, records=list(m.records) + duplicates)


def _allocate(n: int, fractions: tuple[float, float, float]) -> list[int]:
    """Largest-remainder split of n records; stays within 1 of exact shares."""
    exact = [f * n for f in fractions]
    base = [int(np.floor(e)) for e in exact]
    order = sorted(range(len(fractions)), key=lambda i: (base[i] - exact[i], i))
    for i in range(n - sum(base)):
        base[order[i]] += 1
    return base


def split(
    m: DatasetManifest,
    fractions: tuple[float, float, float],
    seed: AugSeed,
    test_per_class: int | None = None,
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Deterministic stratified train/val/test split.

    Records sharing an image path (an original and its duplicates) move as
    one group so upsampled copies never leak across splits. With
    ``test_per_class`` set, the test manifest is upsampled to that many
    records per class after stratification.
    """
    if len(fractions) != 3:
        raise ValueError("fractions must be (train, val, test)")
    if any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must be positive and sum to 1")
    picked: tuple[list[int], list[int], list[int]] = ([], [], [])
    index_by_class: dict[int, list[int]] = {}
    for i, r in enumerate(m.records):
        index_by_class.setdefault(r.label, []).append(i)
    for label in sorted(index_by_class):
        indices = index_by_class[label]
        groups: dict[str, list[int]] = {}
        for i in indices:
            groups.setdefault(m.records[i].path, []).append(i)
        keys = list(groups)
        if len(keys) < 3:
            raise InsufficientClassError(
                f"class {label} has {len(keys)} distinct images; need >= 3"
            )
        order = seed.split(label).rng().permutation(len(keys))
        deficits = _allocate(len(indices), tuple(fractions))
        for k in order:
            dest = max(range(3), key=lambda s: (deficits[s], -s))
            bucket = groups[keys[k]]
            picked[dest].extend(bucket)
            deficits[dest] -= len(bucket)
    out = []
    for part in picked:
        recs = [m.records[i] for i in sorted(part)]
        out.append(DatasetManifest(root=m.root, records=recs))
    if test_per_class is not None:
        out[2] = balance_upsample(out[2], test_per_class, seed.split(NUM_CLASSES + 1))
    return out[0], out[1], out[2]


def subset(
    m: DatasetManifest,
    classes: list[int] | None = None,
    per_class: int | None = None,
    seed: AugSeed | None = None,
) -> DatasetManifest:
    """Restrict a manifest to chosen classes and/or cap records per class.

    With a seed the cap samples without replacement; without one it keeps
    the first records in manifest order.
    """
    wanted = set(classes) if classes is not None else None
    picked: list[int] = []
    index_by_class: dict[int, list[int]] = {}
    for i, r in enumerate(m.records):
        index_by_class.setdefault(r.label, []).append(i)
    for label in sorted(index_by_class):
        if wanted is not None and label not in wanted:
            continue
        indices = index_by_class[label]
        if per_class is not None and len(indices) > per_class:
            if seed is not None:
                sel = seed.split(label).rng().permutation(len(indices))[:per_class]
                indices = [indices[i] for i in sorted(sel)]
            else:
                indices = indices[:per_class]
        picked.extend(indices)
    return DatasetManifest(root=m.root, records=[m.records[i] for i in sorted(picked)])
