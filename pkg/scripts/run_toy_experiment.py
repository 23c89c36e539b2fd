#!/usr/bin/env python3
"""End-to-end desk-scale experiment on the bundled synthetic faces.

Generates the toy dataset, runs the full training pipeline (SR, CC, and face
pretraining, then joint fine-tuning) through the CLI, and finishes with the
metrics report plus qualitative image grids. Schedules here are tuned to
minutes of CPU time, not to the full-length defaults.
"""

import argparse
import sys
from pathlib import Path

from crsr.cli import run_command
from crsr.toydata import BUNDLED_DEGRADATION, write_toy_dataset

TOY_CONFIG = """\
hr_dir: {hr_dir}
genuine_lr_dir: {lr_dir}
output_dir: {out_dir}
lr: 0.001
batch_size: 16
seed: {seed}
blur_sigma_min: {blur_min}
blur_sigma_max: {blur_max}
noise_sigma_min: {noise_min}
noise_sigma_max: {noise_max}
quality_min: {q_min}
quality_max: {q_max}
"""


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("workdir", type=Path, help="directory for data, checkpoints, and reports")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--sr-steps", type=int, default=300)
    parser.add_argument("--cc-steps", type=int, default=400)
    parser.add_argument("--face-steps", type=int, default=250)
    parser.add_argument("--joint-steps", type=int, default=100)
    args = parser.parse_args()

    args.workdir.mkdir(parents=True, exist_ok=True)
    hr_dir, lr_dir = write_toy_dataset(args.workdir / "data", seed=args.seed)
    config = args.workdir / "toy.yaml"
    config.write_text(
        TOY_CONFIG.format(
            hr_dir=hr_dir,
            lr_dir=lr_dir,
            out_dir=args.workdir / "runs",
            seed=args.seed,
            blur_min=BUNDLED_DEGRADATION.blur_sigma_range[0],
            blur_max=BUNDLED_DEGRADATION.blur_sigma_range[1],
            noise_min=BUNDLED_DEGRADATION.noise_sigma_range[0],
            noise_max=BUNDLED_DEGRADATION.noise_sigma_range[1],
            q_min=BUNDLED_DEGRADATION.compression_quality_range[0],
            q_max=BUNDLED_DEGRADATION.compression_quality_range[1],
        )
    )

    stages = [
        ["train-sr", "--config", str(config), "--steps", str(args.sr_steps)],
        ["train-cc", "--config", str(config), "--steps", str(args.cc_steps)],
        ["train-face", "--config", str(config), "--steps", str(args.face_steps)],
        ["train-joint", "--config", str(config), "--steps", str(args.joint_steps), "--dump-grids"],
        ["eval", "--config", str(config)],
    ]
    for argv in stages:
        print(f"$ crsr {' '.join(argv)}")
        code = run_command(argv)
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
