"""Mask-aware quality metrics and the pairwise-study trial harness."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .datapipe import TrainingPair
from .imagecore import as_image

PSNR_CAP = 100.0
SIDES = ("left", "right")


def _mse_to_psnr(mse: float) -> float:
    if mse <= 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(1.0 / mse))


def _pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; identical images score ``PSNR_CAP``."""
    a, b = _pair(a, b)
    return _mse_to_psnr(float(np.mean((a - b) ** 2)))


def masked_psnr(a, b, region) -> float:
    """PSNR over the (pixel, channel) entries selected by boolean ``region``."""
    a, b = _pair(a, b)
    region = np.broadcast_to(np.asarray(region, dtype=bool), a.shape)
    n = int(region.sum())
    if n == 0:
        raise ValueError("masked_psnr: empty region")
    return _mse_to_psnr(float(np.sum((a - b)[region] ** 2) / n))


@dataclass(frozen=True)
class EvalReport:
    psnr_full: float
    psnr_clipped_region: float
    psnr_unclipped_region: float
    nonclipped_drift: float
    clipped_fraction: float

    def as_row(self) -> dict:
        return asdict(self)


REPORT_COLUMNS = tuple(f.name for f in fields(EvalReport))


def evaluate_pair(restored, pair: TrainingPair) -> EvalReport:
    """Region-decomposed comparison of ``restored`` against the pair's ground truth.

    An empty region has no error entries and reports ``PSNR_CAP`` (and zero
    drift) instead of raising.
    """
    restored = as_image(restored)
    gt = pair.ground_truth
    if restored.shape != gt.shape:
        raise ValueError(f"shape mismatch: {restored.shape} vs {gt.shape}")
    clipped = pair.mask.clipped
    unclipped = ~clipped
    sq = (restored - gt) ** 2

    def region_psnr(region):
        n = region.sum()
        return _mse_to_psnr(float(sq[region].sum() / n)) if n else PSNR_CAP

    drift = (float(np.abs(restored - pair.clipped)[unclipped].mean())
             if unclipped.any() else 0.0)
    return EvalReport(
        psnr_full=psnr(restored, gt),
        psnr_clipped_region=region_psnr(clipped),
        psnr_unclipped_region=region_psnr(unclipped),
        nonclipped_drift=drift,
        clipped_fraction=float(clipped.mean()),
    )


def write_report_table(path, rows: list[tuple[str, EvalReport]]) -> None:
    """One whitespace-separated row per image plus a trailing mean row."""
    lines = ["image " + " ".join(REPORT_COLUMNS)]
    for name, rep in rows:
        vals = rep.as_row()
        lines.append(name + " " + " ".join(f"{vals[c]:.6f}" for c in REPORT_COLUMNS))
    if rows:
        means = {c: np.mean([r.as_row()[c] for _, r in rows]) for c in REPORT_COLUMNS}
        lines.append("MEAN " + " ".join(f"{means[c]:.6f}" for c in REPORT_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_report_table(path) -> dict[str, dict[str, float]]:
    lines = Path(path).read_text().splitlines()
    header = lines[0].split()[1:]
    return {parts[0]: dict(zip(header, map(float, parts[1:])))
            for parts in (line.split() for line in lines[1:] if line.strip())}


@dataclass
class StudyTrial:
    trial_id: str
    seed: int
    montage: np.ndarray
    left: str  # method shown on the left
    right: str
    image: str = ""
    pad: int = 0

    @property
    def answer_key(self) -> dict[str, str]:
        return {"left": self.left, "right": self.right}


def make_study_trial(gt, rec_a, rec_b, rng: np.random.Generator, trial_id: str = "0",
                     seed: int = 0, pad: int = 16, pad_value: float = 1.0,
                     methods: tuple[str, str] = ("A", "B"), image: str = "") -> StudyTrial:
    """Lay out ``[left | ground truth | right]`` with the A/B sides drawn from ``rng``."""
    gt, rec_a, rec_b = as_image(gt), as_image(rec_a), as_image(rec_b)
    if not (gt.shape == rec_a.shape == rec_b.shape):
        raise ValueError("study images must share dimensions")
    a_left = bool(rng.random() < 0.5)
    left, right = (rec_a, rec_b) if a_left else (rec_b, rec_a)
    h, w, _ = gt.shape
    montage = np.full((h, 3 * w + 2 * pad, 3), pad_value)
    montage[:, :w] = left
    montage[:, w + pad:2 * w + pad] = gt
    montage[:, 2 * w + 2 * pad:] = right
    ma, mb = methods
    return StudyTrial(trial_id=trial_id, seed=seed, montage=montage,
                      left=ma if a_left else mb, right=mb if a_left else ma,
                      image=image or trial_id, pad=pad)


def split_montage(trial: StudyTrial) -> dict[str, np.ndarray]:
    """Recover ``{"gt": ..., method: ...}`` from a montage and its answer key."""
    m = trial.montage
    w = (m.shape[1] - 2 * trial.pad) // 3
    return {
        trial.left: m[:, :w],
        "gt": m[:, w + trial.pad:2 * w + trial.pad],
        trial.right: m[:, 2 * w + 2 * trial.pad:],
    }


def write_answer_key(path, trials: list[StudyTrial]) -> None:
    lines = ["trial_id image left right seed"]
    lines += [f"{t.trial_id} {t.image} {t.left} {t.right} {t.seed}" for t in trials]
    Path(path).write_text("\n".join(lines) + "\n")


def read_answer_key(path) -> dict[str, dict[str, str]]:
    keys = {}
    for line in Path(path).read_text().splitlines()[1:]:
        if not line.strip():
            continue
        trial_id, image, left, right, _seed = line.split()
        keys[trial_id] = {"image": image, "left": left, "right": right}
    return keys


def read_responses(path) -> list[tuple[str, str]]:
    """Parse ``trial_id chosen_side`` lines; ``#`` starts a comment."""
    out = []
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        trial_id, side = line.split()
        out.append((trial_id, side.lower()))
    return out


@dataclass
class PreferenceTally:
    counts: dict[str, int]
    total: int
    per_image: dict[str, dict[str, float]]

    @property
    def rates(self) -> dict[str, float]:
        return {m: c / self.total for m, c in self.counts.items()}


def tally_preferences(responses, keys) -> PreferenceTally:
    """Fraction of responses choosing each method, overall and per image.

    ``keys`` maps trial_id to a dict with ``left``/``right`` (and optionally
    ``image``), or to a :class:`StudyTrial`.
    """
    responses = list(responses)
    if not responses:
        raise ValueError("no responses to tally")
    methods = set()
    for k in keys.values():
        key = k.answer_key if isinstance(k, StudyTrial) else k
        methods.update((key["left"], key["right"]))
    counts = Counter({m: 0 for m in methods})
    by_image: dict[str, Counter] = defaultdict(Counter)
    for trial_id, side in responses:
        if trial_id not in keys:
            raise KeyError(f"response for unknown trial {trial_id!r}")
        if side not in SIDES:
            raise ValueError(f"chosen side must be left/right, got {side!r}")
        k = keys[trial_id]
        key = k.answer_key if isinstance(k, StudyTrial) else k
        image = k.image if isinstance(k, StudyTrial) else key.get("image", trial_id)
        chosen = key[side]
        counts[chosen] += 1
        by_image[image][chosen] += 1
    per_image = {}
    for image, c in sorted(by_image.items()):
        n = sum(c.values())
        per_image[image] = {m: c[m] / n for m in sorted(methods)}
    return PreferenceTally(counts=dict(counts), total=len(responses), per_image=per_image)
