"""Synthetic jersey-number dataset generators.

Two stages of difficulty:

* Simple2D: digit glyphs on flat jersey-colored canvases. Per class and per
  color combination a pool of candidates is defined; each rendered digit
  spawns eleven augmentation slots (one Light, five Medium, five Hard),
  two-digit numbers are built by augmenting each digit separately and
  concatenating, and the final dataset samples uniformly without replacement
  across all color pools until the per-class target is hit.
* Complex2D: Simple2D numbers pasted at a random position and scale onto
  real-world background images, then rescaled to the canvas size.

Everything is driven by an :class:`~jerseynum.augment.AugSeed`; rerunning a
generator with the same config reproduces every byte. Candidates that are not
selected are never rendered - the seed path of an image depends only on its
own identity, not on what else was generated.

The default glyph source is a built-in block-segment renderer (thick
seven-segment strokes), so no font assets are required; a directory of
``0.png`` .. ``9.png`` monochrome glyph masks can be supplied instead.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .augment import AugPolicy, AugSeed, apply_policy
from .datasets import (
    DatasetManifest,
    ManifestRecord,
    UNRECOGNIZABLE,
    digits_for,
    write_manifest,
)
from .imaging import (
    Color,
    Image,
    concat_horizontal,
    load_png,
    paste,
    resize_bilinear,
    save_png,
)


class ConfigError(Exception):
    """Generator configuration cannot be satisfied."""


class FontLoadError(Exception):
    """A glyph source was specified but cannot be read."""


class EmptyBackgroundsError(Exception):
    """Background directory holds no usable images."""


class MissingClassError(Exception):
    """The source number manifest lacks a class the generator needs."""


# Seed-path tags; each purpose gets its own stream family.
_TAG_GLYPH = 1
_TAG_AUG = 2
_TAG_SAMPLE = 3
_TAG_C2D = 4
_TAG_BG = 5
_TAG_AUGDS = 6

# Alg. 2 preamble: one Light, five Medium, five Hard draws per digit.
POLICY_SLOTS = ("light",) + ("medium",) * 5 + ("hard",) * 5

# Jersey palette: Red, Navy Blue, Green, Yellow, White. Light numbers on dark
# jerseys and dark numbers on light ones.
RED = Color(186, 12, 47)
NAVY = Color(12, 35, 64)
GREEN = Color(0, 122, 51)
YELLOW = Color(255, 209, 0)
WHITE = Color(255, 255, 255)


@dataclass(frozen=True)
class Palette:
    """(background, foreground) color pairs a jersey can use."""

    combinations: tuple[tuple[Color, Color], ...]

    def __post_init__(self):
        if not self.combinations:
            raise ValueError("palette needs at least one color combination")
        for bg, fg in self.combinations:
            diff = max(abs(bg.r - fg.r), abs(bg.g - fg.g), abs(bg.b - fg.b))
            if diff < 32:
                raise ValueError(
                    f"combination {bg}/{fg} not distinguishable (max channel diff {diff} < 32)"
                )

    def __len__(self) -> int:
        return len(self.combinations)

    @classmethod
    def default(cls) -> "Palette":
        return cls(
            combinations=(
                (NAVY, WHITE),
                (RED, WHITE),
                (GREEN, WHITE),
                (WHITE, NAVY),
                (YELLOW, NAVY),
            )
        )


@dataclass(frozen=True)
class GlyphSpec:
    """One digit to render: colors, scale range, and glyph source."""

    digit: int
    foreground: Color
    background: Color
    scale: tuple[float, float] = (0.5, 0.9)
    font: str | None = None  # None = built-in segment renderer, else glyph dir
    canvas: int = 100

    def __post_init__(self):
        if not (0 <= self.digit <= 9):
            raise ValueError(f"digit {self.digit} outside [0, 9]")
        if self.foreground == self.background:
            raise ValueError("foreground and background colors must differ")
        a, b = self.scale
        if not (0.25 <= a <= b <= 1.0):
            raise ValueError(f"scale range {self.scale} outside [0.25, 1.0]")
        if self.canvas < 8:
            raise ValueError("canvas too small")


@dataclass(frozen=True)
class GenConfig:
    """Scale knobs shared by both generators.

    Paper scale is ``per_class_target=4000, per_color_pool=1000, canvas=100``
    over classes 0-99; the desk defaults below generate a comparable dataset
    in seconds instead of hours.
    """

    seed: AugSeed
    per_class_target: int = 200
    per_color_pool: int = 60
    canvas: int = 64
    class_range: tuple[int, ...] = tuple(range(100))
    include_no_number_class: bool = True
    glyph_scale: tuple[float, float] = (0.5, 0.9)
    font: str | None = None

    def __post_init__(self):
        if self.canvas < 16:
            raise ValueError("canvas must be >= 16")
        if self.per_class_target < 1 or self.per_color_pool < 1:
            raise ValueError("targets must be >= 1")
        if not self.class_range:
            raise ValueError("class_range is empty")
        for c in self.class_range:
            if not (0 <= c <= 99):
                raise ValueError(f"class_range entry {c} outside [0, 99]")

    @classmethod
    def desk(cls, seed: AugSeed, classes: int = 20, **overrides) -> "GenConfig":
        return cls(seed=seed, class_range=tuple(range(classes)), **overrides)

    @classmethod
    def paper(cls, seed: AugSeed, **overrides) -> "GenConfig":
        defaults = dict(per_class_target=4000, per_color_pool=1000, canvas=100)
        defaults.update(overrides)
        return cls(seed=seed, **defaults)


# --------------------------------------------------------------------------
# glyph rendering

# Segments: A top, B upper right, C lower right, D bottom, E lower left,
# F upper left, G middle.
_SEGMENTS = {
    0: "ABCDEF",
    1: "BC",
    2: "ABGED",
    3: "ABGCD",
    4: "FGBC",
    5: "AFGCD",
    6: "AFGEDC",
    7: "ABC",
    8: "ABCDEFG",
    9: "ABCDFG",
}


def _segment_mask(digit: int, height: int) -> np.ndarray:
    """Boolean glyph mask (height x width) from thickened segment strokes."""
    h = max(height, 5)
    w = max(3, int(round(0.62 * h)))
    t = max(1, int(round(0.17 * h)))
    mid = (h - t) // 2
    half = (h + t) // 2
    rects = {
        "A": (0, 0, w, t),
        "B": (w - t, 0, w, half),
        "C": (w - t, mid, w, h),
        "D": (0, h - t, w, h),
        "E": (0, mid, t, h),
        "F": (0, 0, t, half),
        "G": (0, mid, w, mid + t),
    }
    mask = np.zeros((h, w), dtype=bool)
    for name in _SEGMENTS[digit]:
        x0, y0, x1, y1 = rects[name]
        mask[y0:y1, x0:x1] = True
    return mask


def _load_glyph_dir(font: str) -> dict[int, np.ndarray]:
    """Read 0.png..9.png masks from a glyph directory, trimmed to content."""
    root = Path(font)
    if not root.is_dir():
        raise FontLoadError(f"glyph source {font!r} is not a directory")
    glyphs = {}
    for d in range(10):
        p = root / f"{d}.png"
        try:
            img = load_png(p)
        except Exception as exc:
            raise FontLoadError(f"cannot read glyph {p}: {exc}") from exc
        mask = img.pixels.astype(np.uint16).sum(axis=2) > 3 * 127
        ys, xs = np.nonzero(mask)
        if ys.size == 0:
            raise FontLoadError(f"glyph {p} is empty")
        glyphs[d] = mask[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    return glyphs


_glyph_cache: dict[str, dict[int, np.ndarray]] = {}


def _glyph_mask(digit: int, height: int, font: str | None) -> np.ndarray:
    if font is None:
        return _segment_mask(digit, height)
    if font not in _glyph_cache:
        _glyph_cache[font] = _load_glyph_dir(font)
    src = _glyph_cache[font][digit]
    width = max(1, int(round(height * src.shape[1] / src.shape[0])))
    gray = np.repeat((src * np.uint8(255))[..., None], 3, axis=2)
    resized = resize_bilinear(Image(gray), width, height)
    return resized.pixels[..., 0] > 127


def render_digit(spec: GlyphSpec, seed: AugSeed) -> Image:
    """Render one digit centered on a square background-colored canvas.

    The glyph height is drawn uniformly from the spec's scale range (as a
    fraction of canvas height), so the same spec under different seeds
    varies in size exactly as the generator pool expects.
    """
    s = spec.canvas
    rng = seed.rng()
    scale = rng.uniform(spec.scale[0], spec.scale[1])
    glyph_h = min(s, max(1, int(round(scale * s))))
    mask = _glyph_mask(spec.digit, glyph_h, spec.font)
    gh, gw = mask.shape
    if gw > s:  # extremely wide custom glyphs get squashed to fit
        img = np.repeat((mask * np.uint8(255))[..., None], 3, axis=2)
        mask = resize_bilinear(Image(img), s, gh).pixels[..., 0] > 127
        gh, gw = mask.shape
    canvas = np.empty((s, s, 3), dtype=np.uint8)
    canvas[:] = spec.background.as_array()
    y0 = (s - gh) // 2
    x0 = (s - gw) // 2
    region = canvas[y0 : y0 + gh, x0 : x0 + gw]
    region[mask] = spec.foreground.as_array()
    return Image(canvas)


# --------------------------------------------------------------------------
# Simple2D

_DEFAULT_POLICIES = {
    "light": AugPolicy.light(),
    "medium": AugPolicy.medium(),
    "hard": AugPolicy.hard(),
}


def _simple2d_candidate(
    label: int,
    combo: int,
    rep: int,
    slot: int,
    config: GenConfig,
    palette: Palette,
    policies: dict[str, AugPolicy],
    glyph_cache: dict,
) -> Image:
    """Materialize one pool candidate: render, augment per digit, concat, resize."""
    bg, fg = palette.combinations[combo]
    policy = policies[POLICY_SLOTS[slot]]
    seed = config.seed
    if label == UNRECOGNIZABLE:
        parts = [Image.new(config.canvas, config.canvas, bg)]
        parts = [
            apply_policy(parts[0], policy, seed.split(_TAG_AUG, label, combo, rep, 0, slot))
        ]
    else:
        parts = []
        for j, digit in enumerate(d for d in digits_for(label) if d is not None):
            key = (combo, rep, j)
            if key not in glyph_cache:
                spec = GlyphSpec(
                    digit=digit,
                    foreground=fg,
                    background=bg,
                    scale=config.glyph_scale,
                    font=config.font,
                    canvas=config.canvas,
                )
                glyph_cache[key] = render_digit(
                    spec, seed.split(_TAG_GLYPH, label, combo, rep, j)
                )
            part = apply_policy(
                glyph_cache[key], policy, seed.split(_TAG_AUG, label, combo, rep, j, slot)
            )
            parts.append(part)
    img = parts[0]
    for extra in parts[1:]:
        img = concat_horizontal(img, extra)
    return resize_bilinear(img, config.canvas, config.canvas)


def _simple2d_class(
    label: int,
    config: GenConfig,
    palette: Palette,
    policies: dict[str, AugPolicy],
    out_dir: Path,
) -> list[ManifestRecord]:
    pool = config.per_color_pool
    total = pool * len(palette)
    rng = config.seed.split(_TAG_SAMPLE, label).rng()
    selected = np.sort(rng.choice(total, size=config.per_class_target, replace=False))
    class_dir = out_dir / str(label)
    class_dir.mkdir(parents=True, exist_ok=True)
    glyph_cache: dict = {}
    records = []
    for index, flat in enumerate(selected):
        combo, pos = divmod(int(flat), pool)
        rep, slot = divmod(pos, len(POLICY_SLOTS))
        img = _simple2d_candidate(
            label, combo, rep, slot, config, palette, policies, glyph_cache
        )
        rel = f"{label}/{index}.png"
        save_png(img, out_dir / rel)
        records.append(
            ManifestRecord(
                path=rel,
                label=label,
                digits=digits_for(label),
                source="simple2d",
                policy=POLICY_SLOTS[slot],
                seed=(_TAG_AUG, label, combo, rep, slot),
            )
        )
    return records


def gen_simple2d(
    config: GenConfig,
    palette: Palette,
    out_dir: str | os.PathLike,
    policies: dict[str, AugPolicy] | None = None,
    jobs: int = 1,
) -> DatasetManifest:
    """Generate the flat-background number dataset and its manifest.

    For every class, ``per_color_pool`` candidates exist per palette
    combination; exactly ``per_class_target`` of them are sampled without
    replacement and written to ``<out_dir>/<class>/<index>.png``.
    """
    policies = dict(_DEFAULT_POLICIES, **(policies or {}))
    total = config.per_color_pool * len(palette)
    if config.per_class_target > total:
        raise ConfigError(
            f"per_class_target {config.per_class_target} exceeds pool of "
            f"{total} candidates ({config.per_color_pool} x {len(palette)} combos)"
        )
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = list(config.class_range)
    if config.include_no_number_class:
        labels.append(UNRECOGNIZABLE)

    def job(label: int) -> list[ManifestRecord]:
        return _simple2d_class(label, config, palette, policies, out_dir)

    records: list[ManifestRecord] = []
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            for recs in pool_exec.map(job, labels):
                records.extend(recs)
    else:
        for label in labels:
            records.extend(job(label))
    manifest = DatasetManifest(root=out_dir, records=records)
    write_manifest(manifest)
    return manifest


# --------------------------------------------------------------------------
# Complex2D

def _list_backgrounds(backgrounds: Path) -> list[Path]:
    files = sorted(p for p in backgrounds.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise EmptyBackgroundsError(f"no PNG backgrounds in {backgrounds}")
    return files


def _complex2d_class(
    label: int,
    numbers_by_class: dict[int, list[ManifestRecord]],
    numbers_root: Path,
    bg_files: list[Path],
    bg_cache: dict[Path, Image],
    config: GenConfig,
    out_dir: Path,
) -> list[ManifestRecord]:
    class_dir = out_dir / str(label)
    class_dir.mkdir(parents=True, exist_ok=True)
    number_cache: dict[str, Image] = {}
    records = []
    for i in range(config.per_class_target):
        rng = config.seed.split(_TAG_C2D, label, i).rng()
        bg_path = bg_files[int(rng.integers(len(bg_files)))]
        if bg_path not in bg_cache:
            bg_cache[bg_path] = load_png(bg_path)
        bg = bg_cache[bg_path]
        short = min(bg.width, bg.height)
        if label == UNRECOGNIZABLE:
            # raw background crop, no number anywhere
            side = max(1, int(round(rng.uniform(0.3, 1.0) * short)))
            x = int(rng.integers(0, bg.width - side + 1))
            y = int(rng.integers(0, bg.height - side + 1))
            composite = Image(bg.pixels[y : y + side, x : x + side])
        else:
            recs = numbers_by_class[label]
            rec = recs[int(rng.integers(len(recs)))]
            if rec.path not in number_cache:
                number_cache[rec.path] = load_png(numbers_root / rec.path)
            side = max(1, int(round(rng.uniform(0.2, 0.6) * short)))
            patch = resize_bilinear(number_cache[rec.path], side, side)
            x = int(rng.integers(0, bg.width - side + 1))
            y = int(rng.integers(0, bg.height - side + 1))
            composite = paste(bg, patch, x, y)
        composite = resize_bilinear(composite, config.canvas, config.canvas)
        rel = f"{label}/{i}.png"
        save_png(composite, out_dir / rel)
        records.append(
            ManifestRecord(
                path=rel,
                label=label,
                digits=digits_for(label),
                source="complex2d",
                policy=None,
                seed=(_TAG_C2D, label, i),
            )
        )
    return records


def gen_complex2d(
    numbers: DatasetManifest,
    backgrounds: str | os.PathLike,
    config: GenConfig,
    out_dir: str | os.PathLike,
    jobs: int = 1,
) -> DatasetManifest:
    """Composite number images onto random backgrounds, one class at a time.

    Each composite picks a random background and a random number image of
    the class, scales the number patch to a uniform fraction (0.2-0.6) of
    the background's short side, pastes it fully inside the frame at a
    random position, and rescales the result to the canvas size. With
    ``include_no_number_class`` set, raw background crops are emitted as
    class 100.
    """
    bg_files = _list_backgrounds(Path(backgrounds))
    numbers_by_class = numbers.by_class()
    for label in config.class_range:
        if not numbers_by_class.get(label):
            raise MissingClassError(f"number manifest has no records for class {label}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = list(config.class_range)
    if config.include_no_number_class:
        labels.append(UNRECOGNIZABLE)
    bg_cache: dict[Path, Image] = {}

    def job(label: int) -> list[ManifestRecord]:
        return _complex2d_class(
            label, numbers_by_class, Path(numbers.root), bg_files, bg_cache, config, out_dir
        )

    records: list[ManifestRecord] = []
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            for recs in pool_exec.map(job, labels):
                records.extend(recs)
    else:
        for label in labels:
            records.extend(job(label))
    manifest = DatasetManifest(root=out_dir, records=records)
    write_manifest(manifest)
    return manifest


# --------------------------------------------------------------------------
# helpers used by demos, tests, and the acceptance proxy domain

def gen_backgrounds(
    out_dir: str | os.PathLike,
    count: int,
    size: tuple[int, int] = (160, 120),
    seed: AugSeed = AugSeed(0),
) -> list[Path]:
    """Write procedurally generated background PNGs (color fields + shapes).

    Stands in for a real photo collection wherever one is not available;
    deterministic under the seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    w, h = size
    paths = []
    for i in range(count):
        rng = seed.split(_TAG_BG, i).rng()
        coarse = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        field = resize_bilinear(Image(coarse), w, h).to_float()
        yy, xx = np.mgrid[0:h, 0:w]
        for _ in range(int(rng.integers(2, 6))):
            color = rng.integers(0, 256, size=3)
            if rng.random() < 0.5:
                x0, x1 = np.sort(rng.integers(0, w, size=2))
                y0, y1 = np.sort(rng.integers(0, h, size=2))
                field[y0 : y1 + 1, x0 : x1 + 1] = color
            else:
                cx, cy = rng.integers(0, w), rng.integers(0, h)
                r = int(rng.integers(4, max(5, min(w, h) // 2)))
                inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
                field[inside] = color
        field += rng.normal(0, 6.0, size=field.shape)
        img = Image(np.clip(np.rint(field), 0, 255).astype(np.uint8))
        path = out_dir / f"bg_{i:03d}.png"
        save_png(img, path)
        paths.append(path)
    return paths


def augment_dataset(
    m: DatasetManifest,
    policy: AugPolicy,
    seed: AugSeed,
    out_dir: str | os.PathLike,
) -> DatasetManifest:
    """Apply one policy draw per record and write the result as a new dataset.

    Used to bake a harder distribution out of an existing one (for example
    the held-out pseudo-real proxy domain used in evaluation experiments).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for idx, rec in enumerate(m.records):
        img = load_png(m.resolve(rec))
        img = apply_policy(img, policy, seed.split(_TAG_AUGDS, idx))
        rel = f"{rec.label}/{idx}.png"
        (out_dir / str(rec.label)).mkdir(exist_ok=True)
        save_png(img, out_dir / rel)
        records.append(
            replace(
                rec,
                path=rel,
                policy=policy.level,
                seed=(_TAG_AUGDS, idx),
            )
        )
    manifest = DatasetManifest(root=out_dir, records=records)
    write_manifest(manifest)
    return manifest
