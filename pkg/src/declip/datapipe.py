"""Synthesis of (clipped, ground-truth, mask) training triples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .imagecore import (HI_LEVELS, LO_LEVELS, ClipMask, ClipMode, ClipThresholds,
                        apply_clip, as_image, compute_clip_mask, list_images, read_image)

log = logging.getLogger(__name__)

DOWNSAMPLE_FACTOR = 8


@dataclass(frozen=True)
class TrainingPair:
    clipped: np.ndarray
    ground_truth: np.ndarray
    mask: ClipMask
    thresholds: ClipThresholds
    mode: ClipMode = ClipMode.STRETCH


@dataclass(frozen=True)
class DatasetConfig:
    source_dir: str | Path
    crop_size: int = 224
    batch_size: int = 16
    seed: int = 0
    clip_mode: ClipMode = ClipMode.STRETCH
    recursive: bool = True

    def __post_init__(self):
        if self.crop_size < 32 or self.crop_size % DOWNSAMPLE_FACTOR:
            raise ValueError(f"crop_size must be >= 32 and divisible by "
                             f"{DOWNSAMPLE_FACTOR}, got {self.crop_size}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        object.__setattr__(self, "clip_mode", ClipMode(self.clip_mode))


def sample_thresholds(rng: np.random.Generator) -> ClipThresholds:
    """Draw integer levels hi in 175..255 and lo in 1..80, then normalize."""
    hi = int(rng.integers(HI_LEVELS[0], HI_LEVELS[1] + 1))
    lo = int(rng.integers(LO_LEVELS[0], LO_LEVELS[1] + 1))
    return ClipThresholds.from_levels(lo, hi)


def upscale_to_min_side(img: np.ndarray, size: int) -> np.ndarray:
    h, w = img.shape[:2]
    scale = size / min(h, w)
    new_h, new_w = max(size, round(h * scale)), max(size, round(w * scale))
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]
    out = F.interpolate(t, size=(new_h, new_w), mode="bicubic", align_corners=False)
    return out[0].clamp_(0.0, 1.0).numpy().transpose(1, 2, 0).copy()


def random_crop(img: np.ndarray, size: int, rng: np.random.Generator) -> np.ndarray:
    """Return a ``size`` x ``size`` window; smaller images are upscaled first."""
    img = as_image(img)
    if min(img.shape[:2]) < size:
        img = upscale_to_min_side(img, size)
    h, w = img.shape[:2]
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return img[top:top + size, left:left + size].copy()


def make_training_pair(img: np.ndarray, cfg: DatasetConfig,
                       rng: np.random.Generator) -> TrainingPair:
    crop = random_crop(img, cfg.crop_size, rng)
    t = sample_thresholds(rng)
    return pair_from_crop(crop, t, cfg.clip_mode)


def pair_from_crop(crop: np.ndarray, t: ClipThresholds,
                   mode: ClipMode | str = ClipMode.STRETCH) -> TrainingPair:
    mode = ClipMode(mode)
    return TrainingPair(clipped=apply_clip(crop, t, mode), ground_truth=crop,
                        mask=compute_clip_mask(crop, t), thresholds=t, mode=mode)


@dataclass
class Batch:
    pairs: list[TrainingPair] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def tensors(self, dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
        """Stack into NCHW ``(clipped, ground_truth)`` tensors."""
        clipped = np.stack([p.clipped for p in self.pairs]).transpose(0, 3, 1, 2)
        gt = np.stack([p.ground_truth for p in self.pairs]).transpose(0, 3, 1, 2)
        return (torch.from_numpy(np.ascontiguousarray(clipped)).to(dtype),
                torch.from_numpy(np.ascontiguousarray(gt)).to(dtype))


def _decodable(path: Path) -> bool:
    try:
        with Image.open(path) as im:
            im.verify()
        return True
    except (OSError, UnidentifiedImageError, SyntaxError) as exc:
        log.warning("skipping unreadable image %s: %s", path, exc)
        return False


class PairDataset:
    """Random-access view of the seeded triple stream.

    Batch ``step`` is a pure function of the file list, the config and the
    step index, which is what makes checkpoint resumption exact.
    """

    def __init__(self, cfg: DatasetConfig, cache_size: int = 64):
        self.cfg = cfg
        self.files = [p for p in list_images(cfg.source_dir, cfg.recursive) if _decodable(p)]
        if not self.files:
            raise RuntimeError(f"no decodable images in {cfg.source_dir}")
        if len(self.files) < cfg.batch_size:
            raise RuntimeError(f"{len(self.files)} images cannot fill one batch of "
                               f"{cfg.batch_size}")
        self._load = lru_cache(maxsize=cache_size)(read_image)

    @property
    def batches_per_epoch(self) -> int:
        return len(self.files) // self.cfg.batch_size

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.cfg.seed, epoch]).permutation(len(self.files))

    def batch(self, step: int) -> Batch:
        epoch, index = divmod(step, self.batches_per_epoch)
        order = self.epoch_order(epoch)
        bs = self.cfg.batch_size
        pairs = []
        for slot, file_idx in enumerate(order[index * bs:(index + 1) * bs]):
            rng = np.random.default_rng([self.cfg.seed, epoch, index, slot])
            pairs.append(make_training_pair(self._load(self.files[file_idx]), self.cfg, rng))
        return Batch(pairs)

    def __call__(self, step: int) -> Batch:
        return self.batch(step)


def batch_iterator(cfg: DatasetConfig, start_step: int = 0,
                   epochs: int | None = None) -> Iterator[Batch]:
    """Yield batches in order; the partial final batch of each epoch is dropped."""
    ds = PairDataset(cfg)
    stop = None if epochs is None else epochs * ds.batches_per_epoch
    step = start_step
    while stop is None or step < stop:
        yield ds.batch(step)
        step += 1
