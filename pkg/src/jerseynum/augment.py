"""Seeded augmentation kernels and the Light/Medium/Hard composite policies.

Every kernel is a pure function of (image, parameters, seed): the same
:class:`AugSeed` always reproduces the same pixels, regardless of execution
order, which is what lets the training pipeline re-augment duplicated records
every epoch without ever repeating an image, and still be replayable.

Policies stack kernels in one fixed order (noise, optical, grid, channel
shuffle, affine); Light enables the first two, Medium adds grid distortion,
Hard adds channel shuffle and the random affine.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import permutations

import numpy as np

from .imaging import Image, from_float, sample_bilinear

# Kernel slots in policy application order; also the seed sub-stream index
# for each kernel so their draws never alias.
K_NOISE, K_OPTICAL, K_GRID, K_SHUFFLE, K_AFFINE = range(5)

_CHANNEL_PERMS = tuple(permutations((0, 1, 2)))

POLICY_LEVELS = ("light", "medium", "hard")


@dataclass(frozen=True)
class AugSeed:
    """Root seed plus a path of non-negative integers.

    ``split(*ix)`` appends path elements; ``rng()`` materializes an
    independent generator for exactly that path. Identical (root, path)
    pairs always yield identical draws.
    """

    root: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if not (0 <= int(self.root) < 2**64):
            raise ValueError("root seed must fit in 64 unsigned bits")
        if any(int(p) < 0 for p in self.path):
            raise ValueError("path elements must be non-negative")

    def split(self, *ix: int) -> "AugSeed":
        return AugSeed(self.root, self.path + tuple(int(i) for i in ix))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence(self.root, spawn_key=self.path)
        )


@dataclass(frozen=True)
class AugPolicy:
    """Parameter set for the augmentation stack at one difficulty level.

    The paper-style levels name which kernels run; magnitudes below are this
    package's defaults and can be overridden per field.
    """

    level: str
    noise_sigma: float = 10.0
    optical_k: float = 0.2
    grid_cells: int = 4
    grid_magnitude: float = 0.3
    shift_limit: float = 0.1
    scale_limit: float = 0.2
    rotate_limit: float = 15.0

    def __post_init__(self):
        if self.level not in POLICY_LEVELS:
            raise ValueError(f"level must be one of {POLICY_LEVELS}, got {self.level!r}")

    @classmethod
    def light(cls, **overrides) -> "AugPolicy":
        return cls(level="light", **overrides)

    @classmethod
    def medium(cls, **overrides) -> "AugPolicy":
        return cls(level="medium", **overrides)

    @classmethod
    def hard(cls, **overrides) -> "AugPolicy":
        return cls(level="hard", **overrides)

    def with_level(self, level: str) -> "AugPolicy":
        return replace(self, level=level)


def gaussian_noise(img: Image, sigma: float, seed: AugSeed) -> Image:
    """Additive per-pixel, per-channel Normal(0, sigma) noise, round-clamped."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    noise = seed.rng().normal(0.0, sigma, size=img.pixels.shape)
    return from_float(img.to_float() + noise)


def optical_distort(
    img: Image, k: float, seed: AugSeed, randomize: bool = False
) -> Image:
    """Radial barrel/pincushion remap about the image center.

    Each destination pixel at radius r samples the source at
    ``r * (1 + k * (r / R)^2)`` along the same ray, with R the image
    half-diagonal. ``randomize=True`` draws the effective coefficient
    uniformly from [-k, k] using ``seed``.
    """
    if abs(k) > 0.5:
        raise ValueError("|k| must be <= 0.5")
    if randomize:
        k = seed.rng().uniform(-k, k)
    h, w = img.height, img.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    half_diag = np.hypot(w, h) / 2.0
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx, dy = gx - cx, gy - cy
    r2 = (dx * dx + dy * dy) / (half_diag * half_diag)
    factor = 1.0 + k * r2
    return from_float(sample_bilinear(img.to_float(), cx + dx * factor, cy + dy * factor))


def _distorted_axis(length: int, cells: int, magnitude: float, rng) -> np.ndarray:
    """Map destination coordinates [0, length-1] to source coordinates.

    Cell boundaries keep the endpoints fixed; interior boundaries move by
    per-cell stretch factors drawn from U(1-d, 1+d), renormalized so the
    total extent is preserved.
    """
    widths = rng.uniform(1.0 - magnitude, 1.0 + magnitude, size=cells)
    bounds = np.concatenate([[0.0], np.cumsum(widths)])
    bounds *= (length - 1) / bounds[-1]  # destination-side boundaries
    uniform = np.linspace(0.0, length - 1, cells + 1)  # source-side boundaries
    coords = np.arange(length, dtype=np.float64)
    return np.interp(coords, bounds, uniform)


def grid_distort(img: Image, cells: int, magnitude: float, seed: AugSeed) -> Image:
    """Piecewise-linear lattice warp; axes are distorted independently."""
    if cells < 2:
        raise ValueError("cells must be >= 2")
    if not (0 <= magnitude < 1):
        raise ValueError("magnitude must be in [0, 1)")
    rng = seed.rng()
    src_x = _distorted_axis(img.width, cells, magnitude, rng)
    src_y = _distorted_axis(img.height, cells, magnitude, rng)
    gx, gy = np.meshgrid(src_x, src_y)
    return from_float(sample_bilinear(img.to_float(), gx, gy))


def channel_shuffle(img: Image, seed: AugSeed) -> Image:
    """Apply one of the six RGB permutations, chosen uniformly.

    Permutation p means output channel ``p[c]`` takes input channel ``c``
    (a draw of (1, 0, 2) swaps red into green and green into red).
    """
    perm = _CHANNEL_PERMS[seed.rng().integers(6)]
    out = np.empty_like(img.pixels)
    for src_c, dst_c in enumerate(perm):
        out[..., dst_c] = img.pixels[..., src_c]
    return Image(out)


def affine_transform(
    img: Image, shift: tuple[float, float], scale: float, angle_deg: float
) -> Image:
    """Deterministic shift/scale/rotate about the image center.

    Forward model: rotate by ``angle_deg`` and scale about the center, then
    translate by ``shift`` pixels. Sampling is inverse-mapped bilinear with
    edge replication.
    """
    h, w = img.height, img.width
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dx = gx - cx - shift[0]
    dy = gy - cy - shift[1]
    # inverse of rotate-then-scale: rotate by -theta, divide by scale
    src_x = cx + (cos_t * dx + sin_t * dy) / scale
    src_y = cy + (-sin_t * dx + cos_t * dy) / scale
    return from_float(sample_bilinear(img.to_float(), src_x, src_y))


def shift_scale_rotate(
    img: Image,
    shift_limit: float,
    scale_limit: float,
    rotate_limit: float,
    seed: AugSeed,
) -> Image:
    """Random affine within the given limits, drawn from ``seed``."""
    if not (0 <= shift_limit <= 0.5):
        raise ValueError("shift_limit must be in [0, 0.5]")
    if not (0 <= scale_limit < 1):
        raise ValueError("scale_limit must be in [0, 1)")
    if not (0 <= rotate_limit <= 180):
        raise ValueError("rotate_limit must be in [0, 180]")
    rng = seed.rng()
    dx = rng.uniform(-shift_limit, shift_limit) * img.width
    dy = rng.uniform(-shift_limit, shift_limit) * img.height
    scale = rng.uniform(1.0 - scale_limit, 1.0 + scale_limit)
    angle = rng.uniform(-rotate_limit, rotate_limit)
    return affine_transform(img, (dx, dy), scale, angle)


def apply_policy(img: Image, policy: AugPolicy, seed: AugSeed) -> Image:
    """Run the policy's kernels in the fixed stack order under ``seed``."""
    out = gaussian_noise(img, policy.noise_sigma, seed.split(K_NOISE))
    out = optical_distort(out, policy.optical_k, seed.split(K_OPTICAL), randomize=True)
    if policy.level in ("medium", "hard"):
        out = grid_distort(
            out, policy.grid_cells, policy.grid_magnitude, seed.split(K_GRID)
        )
    if policy.level == "hard":
        out = channel_shuffle(out, seed.split(K_SHUFFLE))
        out = shift_scale_rotate(
            out,
            policy.shift_limit,
            policy.scale_limit,
            policy.rotate_limit,
            seed.split(K_AFFINE),
        )
    return out
