"""Torso-box geometry: from pose keypoints to cropped number regions.

Person detection and pose estimation happen upstream in some other system;
this module only ingests their outputs (a JSON-lines file of per-player
keypoints) and does the geometry: bounding box of the four torso keypoints,
outward expansion to catch the number, clamping, cropping.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

from .datasets import ParseError
from .imaging import Image, load_png

log = logging.getLogger(__name__)

KEYPOINT_NAMES = ("left_shoulder", "right_shoulder", "left_hip", "right_hip")

DEFAULT_EXPAND_FACTOR = 0.6
DEFAULT_MIN_CONFIDENCE = 0.5


class LowConfidenceError(Exception):
    """One or more keypoints fall below the confidence threshold."""

    def __init__(self, failing: list[str], threshold: float):
        super().__init__(
            f"keypoints below confidence {threshold}: {', '.join(failing)}"
        )
        self.failing = failing


class DegenerateBoxError(Exception):
    """Keypoints are collinear; the torso box has zero width or height."""


class MissingImageError(Exception):
    """A keypoint record references an image file that does not exist."""


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    confidence: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("keypoint coordinates must be finite")
        if self.x < 0 or self.y < 0:
            raise ValueError("keypoint coordinates must be >= 0")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError("confidence must be in [0, 1]")


@dataclass(frozen=True)
class TorsoKeypoints:
    left_shoulder: Keypoint
    right_shoulder: Keypoint
    left_hip: Keypoint
    right_hip: Keypoint

    def items(self):
        return [(name, getattr(self, name)) for name in KEYPOINT_NAMES]


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"degenerate box {self}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0


def torso_box(kp: TorsoKeypoints, min_confidence: float = DEFAULT_MIN_CONFIDENCE) -> BBox:
    """Axis-aligned bounding box of the four torso keypoints."""
    failing = [name for name, p in kp.items() if p.confidence < min_confidence]
    if failing:
        raise LowConfidenceError(failing, min_confidence)
    xs = [p.x for _, p in kp.items()]
    ys = [p.y for _, p in kp.items()]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x0 >= x1 or y0 >= y1:
        raise DegenerateBoxError(f"zero-area torso box ({x0}, {y0}, {x1}, {y1})")
    return BBox(x0, y0, x1, y1)


def expand_box(b: BBox, factor: float, bounds: tuple[int, int]) -> BBox:
    """Grow width and height by ``factor`` total (half per side), then clamp.

    ``bounds`` is the (width, height) of the containing image. The default
    factor used throughout the pipeline is 0.6, i.e. a 10x20 box becomes
    16x32 around the same center.
    """
    if factor < 0:
        raise ValueError("factor must be >= 0")
    w_img, h_img = bounds
    dx = b.width * factor / 2.0
    dy = b.height * factor / 2.0
    return BBox(
        max(0.0, b.x0 - dx),
        max(0.0, b.y0 - dy),
        min(float(w_img), b.x1 + dx),
        min(float(h_img), b.y1 + dy),
    )


def crop_torso(
    player: Image,
    kp: TorsoKeypoints,
    factor: float = DEFAULT_EXPAND_FACTOR,
    min_confidence: float = DEFAULT_MIN_CONFIDENCE,
) -> Image:
    """Crop the expanded torso box out of a player image."""
    box = expand_box(torso_box(kp, min_confidence), factor, (player.width, player.height))
    x0, y0 = int(round(box.x0)), int(round(box.y0))
    x1, y1 = int(round(box.x1)), int(round(box.y1))
    return Image(player.pixels[y0:y1, x0:x1])


def _parse_keypoint_record(d: dict) -> tuple[str, TorsoKeypoints]:
    image = d["image"]
    if not isinstance(image, str):
        raise ValueError("'image' must be a string path")
    raw = d["keypoints"]
    points = {}
    for name in KEYPOINT_NAMES:
        x, y, c = raw[name]
        points[name] = Keypoint(float(x), float(y), float(c))
    return image, TorsoKeypoints(**points)


def ingest_keypoints(
    file: str | os.PathLike,
    images_dir: str | os.PathLike,
    strict: bool = False,
) -> list[tuple[Image, TorsoKeypoints]]:
    """Load (image, keypoints) pairs from a JSON-lines keypoint file.

    Records that fail to parse are logged with their line number and
    skipped (or raised as :class:`ParseError` when ``strict``). A record
    whose image file is missing always raises :class:`MissingImageError`.
    Output order follows file order.
    """
    images_dir = Path(images_dir)
    pairs: list[tuple[Image, TorsoKeypoints]] = []
    with open(file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                image_rel, kp = _parse_keypoint_record(json.loads(line))
            except (ValueError, KeyError, TypeError) as exc:
                if strict:
                    raise ParseError(f"{file}: line {lineno}: {exc}", line=lineno) from exc
                log.warning("%s: line %d: skipping malformed record (%s)", file, lineno, exc)
                continue
            image_path = images_dir / image_rel
            if not image_path.exists():
                raise MissingImageError(f"line {lineno}: image not found: {image_path}")
            pairs.append((load_png(image_path), kp))
    return pairs
