"""Deterministic synthetic face corpus for desk-scale runs and tests.

Each identity is a parametric cartoon face (background gradient, head
ellipse, hair cap, eyes, mouth) with per-image jitter in placement, scale,
and brightness. Images are smooth by construction, which keeps 4x
super-resolution learnable from a handful of samples, and values stay inside
[-0.85, 0.85] so degradations have headroom before clipping.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .imaging import (
    HR_SIZE,
    DegradationConfig,
    ImageBatch,
    ImageRole,
    ResampleSpec,
    bicubic_downsample,
    degrade_to_genuine_like,
    save_images,
)

_VALUE_SPAN = 0.85

# Degradation recipe for the bundled corpus: heavy enough that the genuine
# and artificial LR domains are far apart for desk-scale experiments.
BUNDLED_DEGRADATION = DegradationConfig(
    blur_sigma_range=(1.5, 3.0),
    noise_sigma_range=(0.05, 0.12),
    compression_quality_range=(15, 40),
    seed=0,
)


def _smooth_mask(q: np.ndarray, softness: float = 0.05) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(np.clip((q - 1.0) / softness, -60.0, 60.0)))


def _ellipse(yy, xx, cy, cx, ry, rx) -> np.ndarray:
    q = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2
    return _smooth_mask(q)


def _paint(canvas: np.ndarray, mask: np.ndarray, color: np.ndarray) -> None:
    canvas += mask[None] * (color[:, None, None] - canvas)


def make_toy_faces(
    n_identities: int = 4,
    per_identity: int = 8,
    size: int = HR_SIZE,
    seed: int = 0,
) -> tuple[ImageBatch, np.ndarray]:
    """Render ``n_identities * per_identity`` labelled HR faces.

    Returns the batch (role AUX_HR) and the integer identity of each image.
    """
    rng = np.random.default_rng(seed)
    coords = (np.arange(size) + 0.5) / size
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    images = []
    labels = []
    for ident in range(n_identities):
        skin = np.array([rng.uniform(0.55, 0.9), rng.uniform(0.4, 0.75), rng.uniform(0.3, 0.6)])
        hair = rng.uniform(0.05, 0.85, 3)
        bg_a = rng.uniform(0.1, 0.9, 3)
        bg_b = rng.uniform(0.1, 0.9, 3)
        theta = rng.uniform(0.0, np.pi)
        head_rx = rng.uniform(0.24, 0.32)
        head_ry = rng.uniform(0.32, 0.4)
        eye_dx = rng.uniform(0.1, 0.15)
        eye_y = rng.uniform(0.4, 0.48)
        eye_r = rng.uniform(0.028, 0.045)
        eye_color = rng.uniform(0.0, 0.25, 3)
        mouth_y = rng.uniform(0.66, 0.74)
        mouth_rx = rng.uniform(0.08, 0.16)
        mouth_ry = rng.uniform(0.02, 0.05)
        mouth_color = np.array([rng.uniform(0.4, 0.7), rng.uniform(0.05, 0.25), rng.uniform(0.1, 0.3)])

        for _ in range(per_identity):
            cx = 0.5 + rng.normal(0.0, 0.012)
            cy = 0.52 + rng.normal(0.0, 0.012)
            s = rng.uniform(0.92, 1.08)
            bright = rng.uniform(-0.06, 0.06)

            t = (np.cos(theta) * xx + np.sin(theta) * yy + 1.0) / 3.0
            canvas = bg_a[:, None, None] + (bg_b - bg_a)[:, None, None] * t[None]

            rx, ry = head_rx * s, head_ry * s
            head = _ellipse(yy, xx, cy, cx, ry, rx)
            _paint(canvas, head, skin)

            cap = _ellipse(yy, xx, cy - 0.16 * s, cx, ry * 0.75, rx * 1.02)
            above = 1.0 / (1.0 + np.exp(np.clip((yy - (cy - 0.18 * s)) / 0.02, -60.0, 60.0)))
            _paint(canvas, cap * above, hair)

            for side in (-1.0, 1.0):
                eye = _ellipse(yy, xx, cy - (0.52 - eye_y) * s, cx + side * eye_dx * s, eye_r, eye_r * 1.3)
                _paint(canvas, eye, eye_color)

            mouth = _ellipse(yy, xx, cy + (mouth_y - 0.52) * s, cx, mouth_ry, mouth_rx)
            _paint(canvas, mouth, mouth_color)

            canvas = np.clip(canvas + bright, 0.0, 1.0)
            images.append(canvas * 2.0 * _VALUE_SPAN - _VALUE_SPAN)
            labels.append(ident)

    data = torch.from_numpy(np.stack(images).astype(np.float32))
    return ImageBatch(data, ImageRole.AUX_HR), np.array(labels, dtype=np.int64)


def toy_file_names(labels: np.ndarray) -> list[str]:
    """File names carrying the identity prefix expected by the labelled loader."""
    counters: dict[int, int] = {}
    names = []
    for label in labels.tolist():
        k = counters.get(label, 0)
        counters[label] = k + 1
        names.append(f"id{label}_{k:03d}.png")
    return names


@dataclass(frozen=True)
class ToyCorpus:
    """The bundled experiment corpus: a 32-image training split (4 identities
    times 8 renders) plus 2 held-out renders per identity, with the genuine
    and artificial LR views of the training split precomputed."""

    hr_train: ImageBatch
    hr_holdout: ImageBatch
    labels_train: np.ndarray
    labels_holdout: np.ndarray
    genuine_train: ImageBatch
    artificial_train: ImageBatch


def bundled_toy_corpus(seed: int = 0) -> ToyCorpus:
    """Deterministic train/held-out split of the bundled synthetic faces."""
    per_identity = 10
    hold_per_identity = 2
    faces, labels = make_toy_faces(4, per_identity, seed=seed)
    train_idx = [i for i in range(len(faces)) if i % per_identity < per_identity - hold_per_identity]
    hold_idx = [i for i in range(len(faces)) if i % per_identity >= per_identity - hold_per_identity]
    hr_train = faces.select(train_idx)
    return ToyCorpus(
        hr_train=hr_train,
        hr_holdout=faces.select(hold_idx),
        labels_train=labels[train_idx],
        labels_holdout=labels[hold_idx],
        genuine_train=degrade_to_genuine_like(hr_train, BUNDLED_DEGRADATION),
        artificial_train=bicubic_downsample(hr_train, ResampleSpec(factor=4)),
    )


def write_toy_dataset(
    root,
    n_identities: int = 4,
    per_identity: int = 8,
    seed: int = 0,
    degradation: DegradationConfig | None = None,
) -> tuple[Path, Path]:
    """Materialize ``<root>/hr`` and ``<root>/genuine_lr`` PNG folders."""
    root = Path(root)
    hr, labels = make_toy_faces(n_identities, per_identity, seed=seed)
    names = toy_file_names(labels)
    hr_dir = root / "hr"
    lr_dir = root / "genuine_lr"
    save_images(hr, hr_dir, names)
    genuine = degrade_to_genuine_like(hr, degradation or BUNDLED_DEGRADATION)
    save_images(genuine, lr_dir, names)
    return hr_dir, lr_dir
