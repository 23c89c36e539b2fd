"""Command-line entry point.

Subcommands: train-sr, train-cc, train-face, train-joint, eval, sr, degrade.
Every command is driven by one flat YAML config, writes into the config's
output directory, and is idempotent: rerunning with the same config and seed
reproduces outputs byte for byte. Exit codes: 0 success, 1 runtime failure
(one-line diagnostic on stderr), 2 usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import torch

from .config import ExperimentConfig, parse_config
from .errors import ConfigError, NoDataError, NumericError, ShapeError, StateError
from .imaging import (
    HR_SIZE,
    LR_SIZE,
    ImageBatch,
    ImageRole,
    ResampleSpec,
    bicubic_downsample,
    degrade_to_genuine_like,
    load_labeled_image_folder,
    save_image_grid,
    save_images,
)
from .metrics import GaussianStats, RecognitionSplit, fid, gaussian_stats, psnr, rank1, ssim
from .networks import (
    NetworkHandle,
    NetworkKind,
    build_network,
    forward_cr,
    forward_face_embed,
    forward_sr,
)
from .training import (
    JOINT_NET_NAMES,
    JsonlWriter,
    Stage,
    TrainState,
    _derive_seed,
    load_checkpoint,
    stage1_pretrain_cc,
    stage1_pretrain_sr,
    stage1_train_face_embed,
    stage2_joint_finetune,
)

SR_CKPT = "sr_pretrain.ckpt"
CC_CKPT = "cc_pretrain.ckpt"
FACE_CKPT = "face_pretrain.ckpt"
JOINT_CKPT = "joint.ckpt"


def _load_hr(cfg: ExperimentConfig):
    if cfg.hr_dir is None:
        raise ConfigError("hr_dir is required for this command")
    return load_labeled_image_folder(cfg.hr_dir, HR_SIZE)


def _load_genuine(cfg: ExperimentConfig, hr: ImageBatch | None = None, hr_names=None):
    """Genuine LR images from disk, or degraded from HR when configured."""
    if cfg.genuine_lr_dir is not None:
        return load_labeled_image_folder(cfg.genuine_lr_dir, LR_SIZE)
    if cfg.degrade_from_hr:
        if hr is None:
            hr, _, hr_names = _load_hr(cfg)
        genuine = degrade_to_genuine_like(hr, cfg.degradation)
        identities = [n.split("_")[0] for n in hr_names]
        order = sorted(set(identities))
        labels = np.array([order.index(i) for i in identities], dtype=np.int64)
        return genuine, labels, list(hr_names)
    raise ConfigError("either genuine_lr_dir or degrade_from_hr is required")


def _fresh_joint_nets(cfg: ExperimentConfig) -> dict[str, NetworkHandle]:
    kinds = {
        "sr": NetworkKind.SR_GEN,
        "cr": NetworkKind.CR_GEN,
        "inv_cr": NetworkKind.INV_CR_GEN,
        "disc_cr": NetworkKind.DISC_CR,
        "disc_inv_cr": NetworkKind.DISC_INV_CR,
        "face": NetworkKind.FACE_EMBED,
    }
    nets = {}
    for name, kind in kinds.items():
        torch.manual_seed(_derive_seed(cfg.schedule.seed, f"init/{name}"))
        nets[name] = build_network(kind, cfg.network)
    return nets


def _gather_nets(cfg: ExperimentConfig, checkpoint: str | None) -> dict[str, NetworkHandle]:
    """Collect networks from an explicit checkpoint, staged checkpoints, or fresh init."""
    out = cfg.output_dir
    if checkpoint is not None:
        _, nets = load_checkpoint(checkpoint, cfg.network)
        merged = _fresh_joint_nets(cfg)
        merged.update(nets)
        return merged
    joint = out / JOINT_CKPT
    if joint.is_file():
        _, nets = load_checkpoint(joint, cfg.network)
        merged = _fresh_joint_nets(cfg)
        merged.update(nets)
        return merged
    nets = _fresh_joint_nets(cfg)
    found = False
    for fname in (SR_CKPT, CC_CKPT, FACE_CKPT):
        path = out / fname
        if path.is_file():
            _, staged = load_checkpoint(path, cfg.network)
            nets.update(staged)
            found = True
    if not found:
        print("note: no checkpoints found, using freshly initialized networks", file=sys.stderr)
    return nets


def _cmd_train_sr(args) -> int:
    cfg = parse_config(args.config)
    hr, _, _ = _load_hr(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    with JsonlWriter(cfg.output_dir / "sr_pretrain.jsonl") as sink:
        stage1_pretrain_sr(
            cfg.schedule,
            hr,
            network_config=cfg.network,
            max_steps=args.steps,
            log_sink=sink,
            checkpoint_path=cfg.output_dir / SR_CKPT,
        )
    print(f"wrote {cfg.output_dir / SR_CKPT}")
    return 0


def _cmd_train_cc(args) -> int:
    cfg = parse_config(args.config)
    hr, _, hr_names = _load_hr(cfg)
    genuine, _, _ = _load_genuine(cfg, hr, hr_names)
    artificial = bicubic_downsample(hr, ResampleSpec(factor=hr.size // LR_SIZE))
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    with JsonlWriter(cfg.output_dir / "cc_pretrain.jsonl") as sink:
        stage1_pretrain_cc(
            cfg.schedule,
            genuine,
            artificial,
            network_config=cfg.network,
            weights=cfg.weights,
            max_steps=args.steps,
            log_sink=sink,
            checkpoint_path=cfg.output_dir / CC_CKPT,
        )
    print(f"wrote {cfg.output_dir / CC_CKPT}")
    return 0


def _cmd_train_face(args) -> int:
    cfg = parse_config(args.config)
    hr, labels, _ = _load_hr(cfg)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    with JsonlWriter(cfg.output_dir / "face_pretrain.jsonl") as sink:
        stage1_train_face_embed(
            cfg.schedule,
            hr,
            labels,
            network_config=cfg.network,
            max_steps=args.steps,
            log_sink=sink,
            checkpoint_path=cfg.output_dir / FACE_CKPT,
        )
    print(f"wrote {cfg.output_dir / FACE_CKPT}")
    return 0


def _cmd_train_joint(args) -> int:
    cfg = parse_config(args.config)
    hr, _, hr_names = _load_hr(cfg)
    genuine, _, _ = _load_genuine(cfg, hr, hr_names)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    if args.from_scratch:
        nets = _fresh_joint_nets(cfg)
    else:
        staged = {}
        for fname in (SR_CKPT, CC_CKPT, FACE_CKPT):
            path = out / fname
            if not path.is_file():
                raise StateError(
                    f"missing stage-1 checkpoint {path}; run train-sr, train-cc and "
                    f"train-face first, or pass --from-scratch"
                )
            _, part = load_checkpoint(path, cfg.network)
            staged.update(part)
        nets = {name: staged[name] for name in JOINT_NET_NAMES}
    with JsonlWriter(out / "joint.jsonl") as sink:
        nets = stage2_joint_finetune(
            cfg.schedule,
            nets,
            {"hr": hr, "genuine": genuine},
            weights=cfg.weights,
            max_steps=args.steps,
            log_sink=sink,
            checkpoint_path=out / JOINT_CKPT,
        )
    if args.dump_grids:
        with torch.no_grad():
            reg = forward_cr(nets["cr"], genuine)
            resolved = forward_sr(nets["sr"], reg)
        save_image_grid(genuine, out / "genuine.png")
        save_image_grid(reg, out / "regulated.png")
        save_image_grid(resolved, out / "resolved.png")
    print(f"wrote {out / JOINT_CKPT}")
    return 0


def _cmd_eval(args) -> int:
    cfg = parse_config(args.config)
    nets = _gather_nets(cfg, args.checkpoint)
    hr, _, hr_names = _load_hr(cfg)
    genuine, _, g_names = _load_genuine(cfg, hr, hr_names)
    ids_hr = [n.split("_")[0] for n in hr_names]
    ids_g = [n.split("_")[0] for n in g_names]
    order = sorted(set(ids_hr) | set(ids_g))
    gallery_ids = np.array([order.index(i) for i in ids_hr], dtype=np.int64)
    probe_ids = np.array([order.index(i) for i in ids_g], dtype=np.int64)

    with torch.no_grad():
        emb_hr = forward_face_embed(nets["face"], hr)
        regulated = forward_cr(nets["cr"], genuine)
        resolved = forward_sr(nets["sr"], regulated)
        emb_sr = forward_face_embed(nets["face"], resolved)
        lr_aux = bicubic_downsample(hr, ResampleSpec(factor=hr.size // LR_SIZE))
        sr_aux = forward_sr(nets["sr"], lr_aux)

    fid_value = fid(gaussian_stats(emb_hr), gaussian_stats(emb_sr))
    psnr_values = [psnr(sr_aux.select([i]), hr.select([i])) for i in range(len(hr))]
    ssim_values = [ssim(sr_aux.select([i]), hr.select([i])) for i in range(len(hr))]
    split = RecognitionSplit(
        gallery_embeddings=emb_hr.numpy(),
        gallery_ids=gallery_ids,
        probe_embeddings=emb_sr.numpy(),
        probe_ids=probe_ids,
    )
    report = {
        "fid": fid_value,
        "psnr_mean": float(np.mean(psnr_values)),
        "ssim_mean": float(np.mean(ssim_values)),
        "rank1": rank1(split),
        "n_images": len(genuine),
        "embed_dim": cfg.network.embed_dim,
        "config_fingerprint": cfg.network.fingerprint(),
    }
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    text = json.dumps(report, sort_keys=True, indent=2)
    (cfg.output_dir / "eval.json").write_text(text + "\n")
    print(text)
    return 0


def _cmd_sr(args) -> int:
    cfg = parse_config(args.config)
    nets = _gather_nets(cfg, args.checkpoint)
    batch, _, names = load_labeled_image_folder(args.input, LR_SIZE)
    with torch.no_grad():
        if args.bypass_cr:
            resolved = forward_sr(nets["sr"], batch)
        else:
            resolved = forward_sr(nets["sr"], forward_cr(nets["cr"], batch))
    save_images(resolved, args.output, names)
    print(f"wrote {len(names)} images to {args.output}")
    return 0


def _cmd_degrade(args) -> int:
    cfg = parse_config(args.config)
    hr, _, names = load_labeled_image_folder(args.input, HR_SIZE)
    dcfg = cfg.degradation
    if args.seed is not None:
        dcfg = dataclasses.replace(dcfg, seed=args.seed)
    genuine = degrade_to_genuine_like(hr, dcfg)
    save_images(genuine, args.output, names)
    print(f"wrote {len(names)} images to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crsr",
        description="Train and evaluate characteristic-regularised face super-resolution.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, steps=True):
        p.add_argument("--config", required=True, help="path to the YAML experiment config")
        if steps:
            p.add_argument("--steps", type=int, default=None, help="override the epoch-derived step count")

    p = sub.add_parser("train-sr", help="pretrain the super-resolver on paired data")
    common(p)
    p.set_defaults(func=_cmd_train_sr)

    p = sub.add_parser("train-cc", help="pretrain the characteristic generators on unpaired LR data")
    common(p)
    p.set_defaults(func=_cmd_train_cc)

    p = sub.add_parser("train-face", help="pretrain the face embedder on labelled HR data")
    common(p)
    p.set_defaults(func=_cmd_train_face)

    p = sub.add_parser("train-joint", help="jointly fine-tune the cascaded generators")
    common(p)
    p.add_argument("--from-scratch", action="store_true", help="skip the stage-1 checkpoint requirement")
    p.add_argument("--dump-grids", action="store_true", help="save genuine/regulated/resolved image grids")
    p.set_defaults(func=_cmd_train_joint)

    p = sub.add_parser("eval", help="emit the metrics report as JSON")
    common(p, steps=False)
    p.add_argument("--checkpoint", default=None, help="explicit checkpoint to evaluate")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sr", help="super-resolve a folder of 16x16 images")
    common(p, steps=False)
    p.add_argument("--checkpoint", default=None, help="explicit checkpoint to load")
    p.add_argument("--input", required=True, help="folder of 16x16 PNG inputs")
    p.add_argument("--output", required=True, help="folder for 64x64 PNG outputs")
    p.add_argument("--bypass-cr", action="store_true", help="skip the characteristic stage")
    p.set_defaults(func=_cmd_sr)

    p = sub.add_parser("degrade", help="materialize a genuine-like LR folder from HR inputs")
    common(p, steps=False)
    p.add_argument("--input", required=True, help="folder of HR PNG inputs")
    p.add_argument("--output", required=True, help="folder for degraded 16x16 PNG outputs")
    p.add_argument("--seed", type=int, default=None, help="override the degradation seed")
    p.set_defaults(func=_cmd_degrade)

    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return int(args.func(args) or 0)
    except (NoDataError, ShapeError, ConfigError, StateError, NumericError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
