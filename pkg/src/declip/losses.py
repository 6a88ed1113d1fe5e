"""Pixel, perceptual and adversarial losses and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.81   # MSE
    beta: float = 0.095   # perceptual
    gamma: float = 0.095  # adversarial

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {value}")


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_loss(a, b) -> torch.Tensor:
    a, b = torch.as_tensor(a), torch.as_tensor(b)
    _same_shape(a, b)
    return ((a - b) ** 2).mean()


def perceptual_loss(extractor, out: torch.Tensor, gt: torch.Tensor) -> torch.Tensor:
    """Sum over layers of ||C_j(out) - C_j(gt)||^2 / (W_j H_j F_j), batch-averaged."""
    _same_shape(out, gt)
    feats_out = extractor(out)
    with torch.no_grad():
        feats_gt = extractor(gt)
    total = out.new_zeros(())
    for fo, fg in zip(feats_out, feats_gt):
        per_image = ((fo - fg) ** 2).flatten(1).sum(1) / fo[0].numel()
        total = total + per_image.mean()
    return total


def stable_neg_log_sigmoid(x):
    """-log(sigmoid(x)) as max(x, 0) - x + log(1 + exp(-|x|)).

    Accepts tensors, arrays or scalars; never overflows.
    """
    if isinstance(x, torch.Tensor):
        return torch.clamp(x, min=0) - x + torch.log1p(torch.exp(-x.abs()))
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0) - x + np.log1p(np.exp(-np.abs(x)))


def _logits(x) -> torch.Tensor:
    if not isinstance(x, torch.Tensor):
        x = torch.as_tensor(np.asarray(x, dtype=np.float64))
    if x.numel() == 0:
        raise ValueError("empty batch of logits")
    return x


def adversarial_generator_loss(fake_logits) -> torch.Tensor:
    """Cross-entropy pushing generated samples towards the 'real' label."""
    return stable_neg_log_sigmoid(_logits(fake_logits)).mean()


def discriminator_loss(real_logits, fake_logits) -> torch.Tensor:
    real, fake = _logits(real_logits), _logits(fake_logits)
    return stable_neg_log_sigmoid(real).mean() + stable_neg_log_sigmoid(-fake).mean()


def composite_loss(w: LossWeights, mse, per, adv):
    return w.alpha * mse + w.beta * per + w.gamma * adv
