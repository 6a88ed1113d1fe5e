"""Command-line entry points: synth | train | declip | eval | study."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .config import ConfigError, ToolConfig
from .datapipe import PairDataset, make_training_pair, sample_thresholds
from .evalkit import (evaluate_pair, make_study_trial, read_answer_key, read_responses,
                      tally_preferences, write_answer_key, write_report_table)
from .imagecore import (apply_clip, compute_clip_mask, list_images, read_image,
                        visualize_mask, write_png)
from .nets import FeatureExtractor, infer_any_size
from .trainer import (CheckpointError, TrainState, generator_from_checkpoint,
                      latest_checkpoint, load_checkpoint, state_from_checkpoint, train)

log = logging.getLogger("declip")


class CommandError(RuntimeError):
    pass


def _readable_images(directory) -> list[tuple[Path, np.ndarray]]:
    files = list_images(directory)
    out = []
    for path in files:
        try:
            out.append((path, read_image(path)))
        except (OSError, ValueError) as exc:
            log.warning("skipping unreadable image %s: %s", path, exc)
    if not out:
        raise CommandError(f"no readable images in {directory}")
    return out


def _to_chw(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).float()


def _from_chw(t: torch.Tensor) -> np.ndarray:
    return t.numpy().transpose(1, 2, 0).astype(np.float64).clip(0.0, 1.0)


def _load_extractor(cfg: ToolConfig) -> FeatureExtractor | None:
    if cfg.beta == 0:
        return None
    if not cfg.vgg_weights:
        raise CommandError("vgg_weights is not set; the perceptual loss needs a local "
                           "VGG16 state dict (set beta=0 to train without it)")
    if not Path(cfg.vgg_weights).is_file():
        raise CommandError(f"VGG16 weights not found: {cfg.vgg_weights}")
    return FeatureExtractor(cfg.vgg_weights, layers=tuple(cfg.vgg_layers))


def _load_generator(path):
    try:
        return generator_from_checkpoint(load_checkpoint(path))
    except (KeyError, RuntimeError, TypeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"architecture mismatch in {path}: {exc}") from exc


def cmd_synth(cfg: ToolConfig, input_dir, out_dir: Path) -> int:
    """Clip every image with seeded thresholds; write clipped, masks and visualization."""
    images = _readable_images(input_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["image lo_level hi_level mode"]
    for i, (path, img) in enumerate(images):
        t = sample_thresholds(np.random.default_rng([cfg.seed, i]))
        clipped = apply_clip(img, t, cfg.clip_mode)
        mask = compute_clip_mask(img, t)
        stem = path.stem
        write_png(out_dir / f"{stem}_clipped.png", clipped)
        write_png(out_dir / f"{stem}_over.png", mask.over.astype(np.float64))
        write_png(out_dir / f"{stem}_under.png", mask.under.astype(np.float64))
        write_png(out_dir / f"{stem}_vis.png", visualize_mask(clipped, mask))
        rows.append(f"{stem} {round(t.lo * 255)} {round(t.hi * 255)} {cfg.clip_mode}")
    (out_dir / "thresholds.txt").write_text("\n".join(rows) + "\n")
    print(f"synthesized {len(images)} clipped images into {out_dir}")
    return 0


def cmd_train(cfg: ToolConfig, out_dir: Path, resume: bool = False) -> int:
    torch.use_deterministic_algorithms(True)
    data_cfg = cfg.dataset()
    extractor = _load_extractor(cfg)
    ckpt_dir = out_dir / "checkpoints"
    last = latest_checkpoint(ckpt_dir) if ckpt_dir.is_dir() else None
    if resume and last is not None:
        ckpt = load_checkpoint(last)
        state = state_from_checkpoint(ckpt, extractor, cfg=cfg.train())
        state.tool_config = cfg.to_dict()
        print(f"resuming from {last} at step {state.step}")
    else:
        if last is not None and not resume:
            raise CommandError(f"{ckpt_dir} already holds checkpoints; pass --resume")
        state = TrainState.create(cfg.train(), data_cfg.crop_size, extractor,
                                  tool_config=cfg.to_dict())
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg.dump(out_dir / "config.yaml")
    dataset = PairDataset(data_cfg)

    def report(step, m):
        if step % 10 == 0 or step == state.cfg.steps:
            print(f"step {step}: mse={m['mse']:.5f} per={m['per']:.5f} "
                  f"adv={m['adv']:.4f} disc={m['disc_loss']:.4f}", flush=True)

    train(state, dataset, out_dir=ckpt_dir, on_step=report)
    print(f"finished at step {state.step}; checkpoints in {ckpt_dir}")
    return 0


def cmd_declip(cfg: ToolConfig, checkpoint, images: list[str], out_dir: Path) -> int:
    gen = _load_generator(checkpoint)
    paths = []
    for item in images:
        p = Path(item)
        paths.extend(list_images(p) if p.is_dir() else [p])
    if not paths:
        raise CommandError("no input images")
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in paths:
        img = read_image(path)
        restored = _from_chw(infer_any_size(gen, _to_chw(img)))
        write_png(out_dir / f"{path.stem}.png", restored)
    print(f"wrote {len(paths)} restored images to {out_dir}")
    return 0


def cmd_eval(cfg: ToolConfig, checkpoint, out_dir: Path, baseline: str | None = None) -> int:
    """Synthesize one seeded pair per image, restore it, and tabulate EvalReports."""
    data_cfg = cfg.dataset()
    images = _readable_images(data_cfg.source_dir)
    gen = _load_generator(checkpoint) if checkpoint else None
    if gen is None and baseline is None:
        raise CommandError("eval needs --checkpoint or --baseline")
    rows = []
    for i, (path, img) in enumerate(images):
        pair = make_training_pair(img, data_cfg, np.random.default_rng([cfg.seed, i]))
        if baseline == "oracle":
            restored = pair.ground_truth
        elif baseline == "identity":
            restored = pair.clipped
        else:
            restored = _from_chw(infer_any_size(gen, _to_chw(pair.clipped)))
        rows.append((path.stem, evaluate_pair(restored, pair)))
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "eval_report.txt"
    write_report_table(table, rows)
    print(table.read_text().splitlines()[-1])
    return 0


def cmd_study_build(cfg: ToolConfig, gt_dir, a_dir, b_dir, out_dir: Path,
                    names: tuple[str, str]) -> int:
    gts = {p.stem: p for p in list_images(gt_dir)}
    recs_a = {p.stem: p for p in list_images(a_dir)}
    recs_b = {p.stem: p for p in list_images(b_dir)}
    common = sorted(set(gts) & set(recs_a) & set(recs_b))
    if not common:
        raise CommandError("no image names common to all three directories")
    out_dir.mkdir(parents=True, exist_ok=True)
    trials = []
    for i, stem in enumerate(common):
        trial = make_study_trial(read_image(gts[stem]), read_image(recs_a[stem]),
                                 read_image(recs_b[stem]),
                                 np.random.default_rng([cfg.seed, i]),
                                 trial_id=f"{i:04d}", seed=cfg.seed, pad=cfg.study_pad,
                                 methods=names, image=stem)
        write_png(out_dir / f"trial_{trial.trial_id}.png", trial.montage)
        trials.append(trial)
    # present trials in a random order as well
    order = np.random.default_rng([cfg.seed, len(common)]).permutation(len(trials))
    write_answer_key(out_dir / "answer_key.txt", [trials[k] for k in order])
    print(f"wrote {len(trials)} trials and answer_key.txt to {out_dir}")
    return 0


def cmd_study_tally(key_path, responses_path) -> int:
    tally = tally_preferences(read_responses(responses_path), read_answer_key(key_path))
    for method, rate in sorted(tally.rates.items()):
        print(f"{method} {tally.counts[method]}/{tally.total} {100 * rate:.1f}%")
    for image, rates in tally.per_image.items():
        print(f"  {image} " + " ".join(f"{m}={100 * r:.1f}%" for m, r in rates.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="declip", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="clip a directory of images")
    p.add_argument("input", type=Path)

    p = sub.add_parser("train", parents=[common], help="train the generator")
    p.add_argument("--resume", action="store_true", help="continue from the last checkpoint")

    p = sub.add_parser("declip", parents=[common], help="restore clipped images")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("images", nargs="+")

    p = sub.add_parser("eval", parents=[common], help="mask-aware evaluation report")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", type=Path)
    group.add_argument("--baseline", choices=("identity", "oracle"))

    p = sub.add_parser("study", help="pairwise preference study")
    study = p.add_subparsers(dest="study_command", required=True)
    b = study.add_parser("build", parents=[common], help="emit trial montages + answer key")
    b.add_argument("--gt", type=Path, required=True)
    b.add_argument("--a", type=Path, required=True, dest="a_dir")
    b.add_argument("--b", type=Path, required=True, dest="b_dir")
    b.add_argument("--names", nargs=2, default=("A", "B"), metavar=("NAME_A", "NAME_B"))
    t = study.add_parser("tally", help="tally a responses file against an answer key")
    t.add_argument("--key", type=Path, required=True)
    t.add_argument("--responses", type=Path, required=True)
    return parser


def _resolve_config(args) -> ToolConfig:
    overrides = dict(config_mod.parse_override(item) for item in args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    return config_mod.load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "study" and args.study_command == "tally":
            return cmd_study_tally(args.key, args.responses)
        cfg = _resolve_config(args)
        out = Path(cfg.out_dir)
        if args.command == "synth":
            return cmd_synth(cfg, args.input, out)
        if args.command == "train":
            return cmd_train(cfg, out, resume=args.resume)
        if args.command == "declip":
            return cmd_declip(cfg, args.checkpoint, args.images, out)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, out, baseline=args.baseline)
        if args.command == "study":
            return cmd_study_build(cfg, args.gt, args.a_dir, args.b_dir, out, tuple(args.names))
    except (CommandError, ConfigError, CheckpointError, FileNotFoundError,
            KeyError, ValueError, RuntimeError) as exc:
        print(f"declip {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 1


if __name__ == "__main__":
    sys.exit(main())
