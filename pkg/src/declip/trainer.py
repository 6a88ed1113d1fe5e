"""Alternating generator / discriminator optimization with resumable state."""

from __future__ import annotations

import contextlib
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import torch
import torch.nn as nn

from . import ckptio
from .datapipe import Batch
from .losses import (LossWeights, adversarial_generator_loss, composite_loss,
                     discriminator_loss, mse_loss, perceptual_loss)
from .nets import Discriminator, FeatureExtractor, Generator, arch_fingerprint

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "declip-checkpoint"
CHECKPOINT_VERSION = 1
METRICS_HEADER = "step mse per adv disc_loss"


class NonFiniteLossError(FloatingPointError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gen_lr: float = 1e-3
    gen_adam_beta1: float = 0.5
    gen_adam_beta2: float = 0.999
    gen_adam_eps: float = 1e-8
    disc_lr: float | None = None  # defaults to 0.1 * gen_lr
    grad_clip_norm: float = 5.0
    steps: int = 1000
    batch_size: int = 16
    loss_weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    checkpoint_every: int = 500
    disc_steps_per_gen_step: int = 1

    def __post_init__(self):
        if self.gen_lr <= 0:
            raise ValueError("gen_lr must be positive")
        if self.disc_lr is None:
            object.__setattr__(self, "disc_lr", 0.1 * self.gen_lr)
        if self.disc_lr < 0 or self.grad_clip_norm <= 0:
            raise ValueError("disc_lr must be >= 0 and grad_clip_norm > 0")
        if self.steps < 0 or self.checkpoint_every < 1 or self.disc_steps_per_gen_step < 0:
            raise ValueError("invalid step counts")
        if isinstance(self.loss_weights, dict):
            object.__setattr__(self, "loss_weights", LossWeights(**self.loss_weights))


@contextlib.contextmanager
def frozen_norm_stats(module: nn.Module):
    """Use batch statistics without touching running-stat buffers."""
    saved = {name: buf.clone() for name, buf in module.named_buffers()}
    try:
        yield
    finally:
        with torch.no_grad():
            for name, buf in module.named_buffers():
                buf.copy_(saved[name])


class TrainState:
    """All mutable training state: networks, optimizers and step counter."""

    def __init__(self, cfg: TrainConfig, generator: Generator, discriminator: Discriminator,
                 extractor: FeatureExtractor | None, step: int = 0,
                 tool_config: dict | None = None):
        if extractor is None and cfg.loss_weights.beta > 0:
            raise ValueError("perceptual weight > 0 requires a feature extractor")
        self.cfg = cfg
        self.generator = generator
        self.discriminator = discriminator
        self.extractor = extractor
        self.step = step
        self.tool_config = tool_config or {}
        self.g_opt = torch.optim.Adam(
            generator.parameters(), lr=cfg.gen_lr,
            betas=(cfg.gen_adam_beta1, cfg.gen_adam_beta2), eps=cfg.gen_adam_eps)
        self.d_opt = torch.optim.SGD(discriminator.parameters(), lr=cfg.disc_lr)
        generator.train()
        discriminator.train()

    @classmethod
    def create(cls, cfg: TrainConfig, crop_size: int,
               extractor: FeatureExtractor | None, tool_config: dict | None = None):
        torch.manual_seed(cfg.seed)
        gen = Generator(seed=cfg.seed)
        disc = Discriminator(input_size=crop_size, seed=cfg.seed + 1)
        return cls(cfg, gen, disc, extractor, tool_config=tool_config)

    def fingerprint(self) -> str:
        layers = list(self.extractor.layers) if self.extractor is not None else []
        return arch_fingerprint(self.generator.arch(), self.discriminator.arch(),
                                {"vgg_layers": layers})


def _as_tensors(batch) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(batch, Batch):
        return batch.tensors()
    clipped, gt = batch
    return clipped, gt


def _check_finite(name: str, value: torch.Tensor, state: TrainState, **terms):
    if not torch.isfinite(value):
        detail = ", ".join(f"{k}={float(v.detach()):.6g}" for k, v in terms.items())
        raise NonFiniteLossError(f"non-finite {name} at step {state.step}: {detail}")


def generator_losses(state: TrainState, clipped, gt) -> dict[str, torch.Tensor]:
    w = state.cfg.loss_weights
    _, restored = state.generator(clipped)
    mse = mse_loss(restored, gt)
    if state.extractor is not None:
        per = perceptual_loss(state.extractor, restored, gt)
    else:
        per = restored.new_zeros(())
    adv = adversarial_generator_loss(state.discriminator(restored))
    total = composite_loss(w, mse, per, adv)
    return {"total": total, "mse": mse, "per": per, "adv": adv}


def generator_step(state: TrainState, batch) -> dict[str, float]:
    """One ADAM update of the generator on the weighted loss."""
    clipped, gt = _as_tensors(batch)
    params = [p for p in state.generator.parameters() if p.requires_grad]
    state.g_opt.zero_grad(set_to_none=True)
    # the discriminator scores with batch statistics but must not be mutated
    with frozen_norm_stats(state.discriminator):
        terms = generator_losses(state, clipped, gt)
        _check_finite("generator loss", terms["total"], state, **terms)
        terms["total"].backward(inputs=params)
    grad_norm = torch.nn.utils.clip_grad_norm_(params, state.cfg.grad_clip_norm)
    clipped_norm = torch.linalg.vector_norm(
        torch.stack([torch.linalg.vector_norm(p.grad) for p in params if p.grad is not None]))
    state.g_opt.step()
    out = {k: float(v.detach()) for k, v in terms.items()}
    out["grad_norm"] = float(grad_norm)
    out["clipped_grad_norm"] = float(clipped_norm)
    return out


def discriminator_step(state: TrainState, batch) -> dict[str, float]:
    """One SGD update of the discriminator; the generator is left untouched."""
    clipped, gt = _as_tensors(batch)
    with torch.no_grad(), frozen_norm_stats(state.generator):
        _, fake = state.generator(clipped)
    params = list(state.discriminator.parameters())
    state.d_opt.zero_grad(set_to_none=True)
    loss = discriminator_loss(state.discriminator(gt), state.discriminator(fake))
    _check_finite("discriminator loss", loss, state, disc_loss=loss)
    loss.backward(inputs=params)
    state.d_opt.step()
    return {"disc_loss": float(loss.detach())}


class MetricsLog:
    """Plain-text per-step loss log: ``step mse per adv disc_loss``."""

    def __init__(self, path):
        self.path = Path(path)

    def truncate_after(self, step: int) -> None:
        if not self.path.exists():
            return
        keep = [line for line in self.path.read_text().splitlines()
                if line == METRICS_HEADER or (line and int(line.split()[0]) <= step)]
        self.path.write_text("".join(f"{line}\n" for line in keep))

    def append(self, step: int, m: dict) -> None:
        new = not self.path.exists()
        with self.path.open("a") as fh:
            if new:
                fh.write(METRICS_HEADER + "\n")
            fh.write(f"{step} {m['mse']:.9g} {m['per']:.9g} {m['adv']:.9g} "
                     f"{m.get('disc_loss', math.nan):.9g}\n")

    def read(self) -> list[dict]:
        rows = []
        for line in self.path.read_text().splitlines()[1:]:
            step, *vals = line.split()
            rows.append({"step": int(step), **dict(zip(METRICS_HEADER.split()[1:],
                                                      map(float, vals)))})
        return rows


def checkpoint_payload(state: TrainState) -> dict:
    cfg = dataclasses.asdict(state.cfg)
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": state.fingerprint(),
        "arch": {"generator": state.generator.arch(),
                 "discriminator": state.discriminator.arch()},
        "train_config": cfg,
        "tool_config": state.tool_config,
        "step": state.step,
        "generator": state.generator.state_dict(),
        "discriminator": state.discriminator.state_dict(),
        "g_opt": state.g_opt.state_dict(),
        "d_opt": state.d_opt.state_dict(),
        "torch_rng": torch.get_rng_state(),
    }


def save_checkpoint(state: TrainState, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(ckptio.dumps(checkpoint_payload(state)))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> dict:
    """Read and validate a checkpoint container (format and version only)."""
    data = Path(path).read_bytes()
    try:
        ckpt = ckptio.loads(data)
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a declip checkpoint")
    if ckpt.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {ckpt.get('version')} != "
                              f"{CHECKPOINT_VERSION}")
    return ckpt


def generator_from_checkpoint(ckpt: dict) -> Generator:
    arch = dict(ckpt["arch"]["generator"])
    arch.pop("net")
    gen = Generator(**arch)
    gen.load_state_dict(ckpt["generator"])
    gen.eval()
    return gen


def state_from_checkpoint(ckpt: dict, extractor: FeatureExtractor | None,
                          expected_fingerprint: str | None = None,
                          cfg: TrainConfig | None = None) -> TrainState:
    """Rebuild a TrainState; ``cfg`` replaces the stored config (e.g. to extend ``steps``)."""
    cfg = cfg or TrainConfig(**ckpt["train_config"])
    g_arch = dict(ckpt["arch"]["generator"])
    d_arch = dict(ckpt["arch"]["discriminator"])
    g_arch.pop("net")
    d_arch.pop("net")
    state = TrainState(cfg, Generator(**g_arch), Discriminator(**d_arch), extractor,
                       step=ckpt["step"], tool_config=ckpt.get("tool_config"))
    if state.fingerprint() != ckpt["fingerprint"]:
        raise CheckpointError("checkpoint architecture does not match the feature extractor")
    if expected_fingerprint is not None and expected_fingerprint != ckpt["fingerprint"]:
        raise CheckpointError(f"architecture mismatch: checkpoint {ckpt['fingerprint']} "
                              f"vs configured {expected_fingerprint}")
    state.generator.load_state_dict(ckpt["generator"])
    state.discriminator.load_state_dict(ckpt["discriminator"])
    state.g_opt.load_state_dict(ckpt["g_opt"])
    state.d_opt.load_state_dict(ckpt["d_opt"])
    torch.set_rng_state(ckpt["torch_rng"])
    return state


def checkpoint_path(directory, step: int) -> Path:
    return Path(directory) / f"ckpt_{step:08d}.pt"


def latest_checkpoint(directory) -> Path | None:
    found = sorted(Path(directory).glob("ckpt_*.pt"))
    return found[-1] if found else None


def train(state: TrainState, batches: Callable[[int], object], out_dir=None,
          on_step: Callable[[int, dict], None] | None = None) -> TrainState:
    """Run ``state.cfg.steps`` total steps, resuming from ``state.step``.

    ``batches(step)`` must return the batch for a given step; each step is
    one generator update followed by ``disc_steps_per_gen_step``
    discriminator updates on the same batch.
    """
    cfg = state.cfg
    metrics = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics = MetricsLog(out_dir / "metrics.txt")
        metrics.truncate_after(state.step)
        if state.step == 0:
            save_checkpoint(state, checkpoint_path(out_dir, 0))
    while state.step < cfg.steps:
        batch = batches(state.step)
        m = generator_step(state, batch)
        for _ in range(cfg.disc_steps_per_gen_step):
            m.update(discriminator_step(state, batch))
        state.step += 1
        if metrics is not None:
            metrics.append(state.step, m)
        if on_step is not None:
            on_step(state.step, m)
        log.debug("step %d %s", state.step, m)
        if out_dir is not None and (state.step % cfg.checkpoint_every == 0
                                    or state.step == cfg.steps):
            save_checkpoint(state, checkpoint_path(out_dir, state.step))
    return state
