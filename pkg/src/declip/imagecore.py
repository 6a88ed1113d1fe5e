"""Image representation, exposure clipping and saturation masks.

Images are ``float64`` numpy arrays of shape ``(H, W, 3)`` with values in
``[0, 1]``.  All functions here are pure and never modify their inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

# Threshold ranges in 8-bit levels used when sampling synthetic clips.
LO_LEVELS = (1, 80)
HI_LEVELS = (175, 255)
DEFAULT_EPS = 1.0 / 255.0

RED = np.array([1.0, 0.0, 0.0])
GREEN = np.array([0.0, 1.0, 0.0])


class ClipMode(str, enum.Enum):
    STRETCH = "stretch"
    PLATEAU = "plateau"


@dataclass(frozen=True)
class ClipThresholds:
    """Normalized (lo, hi) pair of a simulated exposure clip."""

    lo: float
    hi: float

    def __post_init__(self):
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)):
            raise ValueError(f"non-finite thresholds: {self}")
        if self.hi <= self.lo:
            raise ValueError(f"hi must exceed lo, got lo={self.lo} hi={self.hi}")
        if self.lo < 0.0 or self.hi > 1.0:
            raise ValueError(f"thresholds must lie in [0, 1], got {self}")

    @classmethod
    def from_levels(cls, lo: int, hi: int) -> "ClipThresholds":
        return cls(lo / 255.0, hi / 255.0)

    def within_sampling_ranges(self) -> bool:
        return (LO_LEVELS[0] / 255.0 <= self.lo <= LO_LEVELS[1] / 255.0
                and HI_LEVELS[0] / 255.0 <= self.hi <= HI_LEVELS[1] / 255.0)


@dataclass(frozen=True)
class ClipMask:
    """Per-pixel, per-channel saturation flags."""

    over: np.ndarray
    under: np.ndarray

    def __post_init__(self):
        if self.over.shape != self.under.shape:
            raise ValueError("over/under mask shapes differ")

    @property
    def clipped(self) -> np.ndarray:
        return self.over | self.under

    @property
    def shape(self):
        return self.over.shape

    def any(self) -> bool:
        return bool(self.over.any() or self.under.any())


def _check_image(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got shape {img.shape}")
    if img.shape[0] == 0 or img.shape[1] == 0:
        raise ValueError("image has zero area")
    return img


def as_image(img) -> np.ndarray:
    """Validate and convert to a float64 ImageTensor."""
    img = _check_image(img).astype(np.float64, copy=False)
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    return img


def normalize(img8: np.ndarray) -> np.ndarray:
    """Map an 8-bit RGB image to [0, 1]."""
    img8 = _check_image(img8)
    if img8.dtype != np.uint8:
        if not np.issubdtype(img8.dtype, np.integer):
            raise TypeError(f"expected integer image, got {img8.dtype}")
        if img8.min() < 0 or img8.max() > 255:
            raise ValueError("integer image values must lie in 0..255")
    return img8.astype(np.float64) / 255.0


def denormalize(img: np.ndarray) -> np.ndarray:
    """Inverse of :func:`normalize` with rounding to the nearest level."""
    img = _check_image(img)
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def apply_clip(img: np.ndarray, t: ClipThresholds,
               mode: ClipMode | str = ClipMode.STRETCH) -> np.ndarray:
    """Simulate exposure clipping at thresholds ``t``.

    ``stretch`` rescales the clamped range so saturated values sit exactly
    at 0 and 1; ``plateau`` leaves them at ``lo`` and ``hi``.
    """
    img = as_image(img)
    mode = ClipMode(mode)
    if t.hi <= t.lo:
        raise ValueError("hi must exceed lo")
    clamped = np.clip(img, t.lo, t.hi)
    if mode is ClipMode.PLATEAU:
        return clamped
    out = (clamped - t.lo) / (t.hi - t.lo)
    over = img >= t.hi
    under = img <= t.lo
    inside = ~(over | under)
    # rounding must not push interior values onto the saturation levels
    out[inside] = np.clip(out[inside], np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))
    out[over] = 1.0
    out[under] = 0.0
    return out


def compute_clip_mask(original: np.ndarray, t: ClipThresholds,
                      shape: tuple | None = None) -> ClipMask:
    original = as_image(original)
    if shape is not None and tuple(shape) != original.shape:
        raise ValueError(f"mask shape {shape} does not match image {original.shape}")
    return ClipMask(over=original >= t.hi, under=original <= t.lo)


def detect_saturation(img: np.ndarray, eps: float = DEFAULT_EPS) -> ClipMask:
    """Flag values within ``eps`` of the display range limits."""
    if not 0.0 <= eps < 0.5:
        raise ValueError(f"eps must lie in [0, 0.5), got {eps}")
    img = as_image(img)
    return ClipMask(over=img >= 1.0 - eps, under=img <= eps)


def visualize_mask(img: np.ndarray, mask: ClipMask) -> np.ndarray:
    """Paint fully over-saturated pixels red and fully under-saturated green.

    Pixels clipped in only some channels pass through unchanged.
    """
    img = as_image(img)
    if mask.shape != img.shape:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape}")
    out = img.copy()
    out[mask.over.all(axis=2)] = RED
    out[mask.under.all(axis=2)] = GREEN
    return out


IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}


def read_image(path) -> np.ndarray:
    """Decode a PNG/JPEG file to a normalized RGB ImageTensor."""
    with Image.open(path) as im:
        return normalize(np.asarray(im.convert("RGB")))


def write_png(path, img: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(denormalize(img), mode="RGB").save(path, format="PNG")


def list_images(directory, recursive: bool = True) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    pattern = "**/*" if recursive else "*"
    return sorted(p for p in directory.glob(pattern)
                  if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
