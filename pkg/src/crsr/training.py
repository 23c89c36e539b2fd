"""Two-stage training: per-module pretraining, then joint fine-tuning.

Stage 1 pretrains the super-resolver on down-sampled pairs, the two
characteristic generators with their discriminators on unpaired LR domains,
and the face embedder with softmax plus center loss on labelled HR images.
Stage 2 fine-tunes the cascaded characteristic and SR generators under the
composite objective while the inverse generator and the face embedder stay
frozen; the feature discriminator is trained from scratch here.

Everything is deterministic given (seed, config, data): batch composition is
driven by a serializable generator, network init by seeds derived per
network, and checkpoints restore parameters, optimizer moments, and the
generator state exactly, so a resumed run reproduces the uninterrupted loss
sequence bit for bit.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpointing import read_container, write_container
from .errors import ConfigError, NoDataError, ShapeError, StateError
from .imaging import (
    HR_SIZE,
    LR_SIZE,
    ImageBatch,
    ImageRole,
    ResampleSpec,
    bicubic_downsample,
)
from .losses import (
    LossWeights,
    composite_total,
    cr_composite_loss,
    cr_sr_loss,
    gan_loss_cr,
    gan_loss_inverse_cr,
    semantic_adaptation_loss,
    sr_mse_loss,
    total_loss,
)
from .networks import (
    NetworkConfig,
    NetworkHandle,
    NetworkKind,
    build_network,
    forward_cr,
    forward_disc,
    forward_face_embed,
    forward_feature_disc,
    forward_sr,
)

SR_IMAGE_GAN_WEIGHT = 1e-3
CENTER_LOSS_WEIGHT = 0.003

LogSink = Callable[[dict], None]


class Stage(Enum):
    SR_PRETRAIN = "sr_pretrain"
    CC_PRETRAIN = "cc_pretrain"
    FACE_PRETRAIN = "face_pretrain"
    JOINT = "joint"


class Ablation(Enum):
    NO_CR = "no_cr"
    NO_SR_RI = "no_sr_ri"
    NO_UL = "no_ul"


@dataclass(frozen=True)
class TrainingSchedule:
    lr: float = 1e-4
    batch_size: int = 16
    epochs_sr: int = 100
    epochs_cc: int = 130
    epochs_joint: int = 10
    seed: int = 0
    paired_unpaired_ratio: tuple[int, int] = (1, 1)
    ablation: frozenset[Ablation] = frozenset()

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        for name, e in (
            ("epochs_sr", self.epochs_sr),
            ("epochs_cc", self.epochs_cc),
            ("epochs_joint", self.epochs_joint),
        ):
            if e < 0:
                raise ConfigError(f"{name} must be >= 0, got {e}")
        p, u = self.paired_unpaired_ratio
        if p < 1 or u < 1:
            raise ConfigError("paired_unpaired_ratio parts must be >= 1")


@dataclass
class TrainState:
    """Mutable training position: stage, step, data order, optimizer moments."""

    stage: Stage
    lr: float
    step: int = 0
    rng: np.random.Generator = field(default_factory=np.random.default_rng)
    optimizers: dict[str, torch.optim.Adam] = field(default_factory=dict)
    aux: dict[str, nn.Module] = field(default_factory=dict)

    def optimizer_for(self, name: str, module: nn.Module) -> torch.optim.Adam:
        if name not in self.optimizers:
            self.optimizers[name] = torch.optim.Adam(
                [p for _, p in module.named_parameters()], lr=self.lr
            )
        return self.optimizers[name]


class _FaceAuxHead(nn.Module):
    """Classifier head plus class centers, used only while training the embedder."""

    def __init__(self, embed_dim: int, n_classes: int):
        super().__init__()
        self.classifier = nn.Linear(embed_dim, n_classes)
        self.centers = nn.Parameter(torch.zeros(n_classes, embed_dim))


def _scalar(value) -> float:
    return float(value.detach()) if isinstance(value, torch.Tensor) else float(value)


def _derive_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _sample_indices(rng: np.random.Generator, n: int, batch_size: int) -> np.ndarray:
    return rng.choice(n, size=batch_size, replace=n < batch_size)


def _total_steps(epochs: int, n: int, batch_size: int, max_steps: int | None) -> int:
    if max_steps is not None:
        return max_steps
    return epochs * math.ceil(n / batch_size)


def _require_role(x: ImageBatch, role: ImageRole, what: str) -> None:
    if x.role is not role:
        raise ShapeError(f"{what} must have role {role.value}, got {x.role.value}")


def _nonempty(x: ImageBatch, what: str) -> None:
    if len(x) == 0:
        raise NoDataError(f"{what} is empty")


class JsonlWriter:
    """Log sink writing one JSON object per line; floats keep full precision."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps(record) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def stage1_pretrain_sr(
    sched: TrainingSchedule,
    hr_data: ImageBatch,
    network_config: NetworkConfig | None = None,
    max_steps: int | None = None,
    log_sink: LogSink | None = None,
    resume: tuple[TrainState, dict[str, NetworkHandle]] | None = None,
    checkpoint_path=None,
) -> NetworkHandle:
    """Pretrain the super-resolver on (down-sampled HR, HR) pairs."""
    cfg = network_config or NetworkConfig()
    _nonempty(hr_data, "hr_data")
    _require_role(hr_data, ImageRole.AUX_HR, "hr_data")
    steps = _total_steps(sched.epochs_sr, len(hr_data), sched.batch_size, max_steps)

    if resume is not None:
        state, nets = resume
        if state.stage is not Stage.SR_PRETRAIN:
            raise StateError(f"cannot resume stage {state.stage.value} as SR pretraining")
    else:
        torch.manual_seed(_derive_seed(sched.seed, "init/sr"))
        nets = {"sr": build_network(NetworkKind.SR_GEN, cfg)}
        if cfg.sr_image_gan:
            torch.manual_seed(_derive_seed(sched.seed, "init/disc_sr_image"))
            nets["disc_sr_image"] = build_network(NetworkKind.DISC_CR, cfg, disc_input_size=HR_SIZE)
        state = TrainState(
            Stage.SR_PRETRAIN,
            lr=sched.lr,
            rng=np.random.default_rng(_derive_seed(sched.seed, "data/sr")),
        )
    sr = nets["sr"]
    disc = nets.get("disc_sr_image")
    opt_sr = state.optimizer_for("sr", sr.module)
    opt_disc = state.optimizer_for("disc_sr_image", disc.module) if disc is not None else None
    spec = ResampleSpec(factor=hr_data.size // LR_SIZE)

    while state.step < steps:
        idx = _sample_indices(state.rng, len(hr_data), sched.batch_size)
        hr_b = hr_data.select(idx)
        lr_b = bicubic_downsample(hr_b, spec)

        gan_value = 0.0
        if disc is not None:
            with torch.no_grad():
                fake = forward_sr(sr, lr_b)
                d_real_scores = forward_disc(disc, hr_b)
            d_loss, _ = gan_loss_cr(forward_disc(disc, hr_b), forward_disc(disc, fake))
            opt_disc.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_disc.step()

        opt_sr.zero_grad(set_to_none=True)
        sr_out = forward_sr(sr, lr_b)
        l_sr = sr_mse_loss(sr_out, hr_b)
        loss = l_sr
        if disc is not None:
            _, gen_term = gan_loss_cr(d_real_scores, forward_disc(disc, sr_out))
            loss = loss + SR_IMAGE_GAN_WEIGHT * gen_term
            gan_value = _scalar(gen_term)
        loss.backward()
        opt_sr.step()
        state.step += 1
        if log_sink is not None:
            report = total_loss(_scalar(l_sr), gan_value, 0.0, 0.0, 0.0, LossWeights())
            log_sink(report.record(state.step, Stage.SR_PRETRAIN.value))

    if checkpoint_path is not None:
        save_checkpoint(state, nets, checkpoint_path)
    return sr


def stage1_pretrain_cc(
    sched: TrainingSchedule,
    genuine_lr_data: ImageBatch,
    artificial_lr_data: ImageBatch,
    network_config: NetworkConfig | None = None,
    weights: LossWeights | None = None,
    max_steps: int | None = None,
    log_sink: LogSink | None = None,
    resume: tuple[TrainState, dict[str, NetworkHandle]] | None = None,
    checkpoint_path=None,
) -> tuple[NetworkHandle, NetworkHandle, NetworkHandle, NetworkHandle]:
    """Adversarially align the two LR domains in both directions.

    Per step: one discriminator update then one generator update for the
    forward and inverse transforms. The forward generator additionally
    minimizes the round-trip reconstruction against the (detached) inverse
    generator output.
    """
    cfg = network_config or NetworkConfig()
    w = weights or LossWeights()
    _nonempty(genuine_lr_data, "genuine_lr_data")
    _nonempty(artificial_lr_data, "artificial_lr_data")
    _require_role(genuine_lr_data, ImageRole.GENUINE_LR, "genuine_lr_data")
    _require_role(artificial_lr_data, ImageRole.ARTIFICIAL_LR, "artificial_lr_data")
    n = min(len(genuine_lr_data), len(artificial_lr_data))
    steps = _total_steps(sched.epochs_cc, n, sched.batch_size, max_steps)

    if resume is not None:
        state, nets = resume
        if state.stage is not Stage.CC_PRETRAIN:
            raise StateError(f"cannot resume stage {state.stage.value} as CC pretraining")
    else:
        nets = {}
        for name, kind in (
            ("cr", NetworkKind.CR_GEN),
            ("inv_cr", NetworkKind.INV_CR_GEN),
            ("disc_cr", NetworkKind.DISC_CR),
            ("disc_inv_cr", NetworkKind.DISC_INV_CR),
        ):
            torch.manual_seed(_derive_seed(sched.seed, f"init/{name}"))
            nets[name] = build_network(kind, cfg)
        state = TrainState(
            Stage.CC_PRETRAIN,
            lr=sched.lr,
            rng=np.random.default_rng(_derive_seed(sched.seed, "data/cc")),
        )
    cr, inv_cr = nets["cr"], nets["inv_cr"]
    disc, disc_inv = nets["disc_cr"], nets["disc_inv_cr"]
    opts = {name: state.optimizer_for(name, nets[name].module) for name in nets}

    while state.step < steps:
        g_idx = _sample_indices(state.rng, len(genuine_lr_data), sched.batch_size)
        a_idx = _sample_indices(state.rng, len(artificial_lr_data), sched.batch_size)
        g_b = genuine_lr_data.select(g_idx)
        a_b = artificial_lr_data.select(a_idx)

        with torch.no_grad():
            fake_art = forward_cr(cr, g_b)
            fake_gen = forward_cr(inv_cr, a_b)
            real_scores = forward_disc(disc, a_b)
            real_scores_inv = forward_disc(disc_inv, g_b)

        d_loss, _ = gan_loss_cr(forward_disc(disc, a_b), forward_disc(disc, fake_art))
        opts["disc_cr"].zero_grad(set_to_none=True)
        d_loss.backward()
        opts["disc_cr"].step()

        d_inv_loss, _ = gan_loss_inverse_cr(
            forward_disc(disc_inv, g_b), forward_disc(disc_inv, fake_gen)
        )
        opts["disc_inv_cr"].zero_grad(set_to_none=True)
        d_inv_loss.backward()
        opts["disc_inv_cr"].step()

        _, inv_gen_loss = gan_loss_inverse_cr(
            real_scores_inv, forward_disc(disc_inv, forward_cr(inv_cr, a_b))
        )
        opts["inv_cr"].zero_grad(set_to_none=True)
        inv_gen_loss.backward()
        opts["inv_cr"].step()

        _, cr_gan = gan_loss_cr(real_scores, forward_disc(disc, forward_cr(cr, g_b)))
        with torch.no_grad():
            pseudo = forward_cr(inv_cr, a_b)
        round_trip = forward_cr(cr, pseudo)
        l_cr = cr_composite_loss(a_b, round_trip, cr_gan, w)
        opts["cr"].zero_grad(set_to_none=True)
        l_cr.backward()
        opts["cr"].step()

        state.step += 1
        if log_sink is not None:
            report = total_loss(0.0, _scalar(cr_gan), _scalar(l_cr), 0.0, 0.0, w)
            log_sink(report.record(state.step, Stage.CC_PRETRAIN.value))

    if checkpoint_path is not None:
        save_checkpoint(state, nets, checkpoint_path)
    return cr, inv_cr, disc, disc_inv


def stage1_train_face_embed(
    sched: TrainingSchedule,
    faces: ImageBatch,
    labels: np.ndarray,
    network_config: NetworkConfig | None = None,
    center_loss_weight: float = CENTER_LOSS_WEIGHT,
    max_steps: int | None = None,
    log_sink: LogSink | None = None,
    resume: tuple[TrainState, dict[str, NetworkHandle]] | None = None,
    checkpoint_path=None,
) -> NetworkHandle:
    """Train the face embedder as a classifier with center loss, then keep
    only the embedding trunk."""
    cfg = network_config or NetworkConfig()
    _nonempty(faces, "faces")
    _require_role(faces, ImageRole.AUX_HR, "faces")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (len(faces),):
        raise ShapeError("labels must align with the face batch")
    n_classes = int(labels.max()) + 1 if labels.size else 0
    if np.unique(labels).size < 2:
        raise ConfigError("face embedding training needs at least 2 identities")
    steps = _total_steps(sched.epochs_sr, len(faces), sched.batch_size, max_steps)

    if resume is not None:
        state, nets = resume
        if state.stage is not Stage.FACE_PRETRAIN:
            raise StateError(f"cannot resume stage {state.stage.value} as face pretraining")
    else:
        torch.manual_seed(_derive_seed(sched.seed, "init/face"))
        nets = {"face": build_network(NetworkKind.FACE_EMBED, cfg)}
        state = TrainState(
            Stage.FACE_PRETRAIN,
            lr=sched.lr,
            rng=np.random.default_rng(_derive_seed(sched.seed, "data/face")),
        )
        torch.manual_seed(_derive_seed(sched.seed, "init/face_aux"))
        state.aux["face_aux"] = _FaceAuxHead(cfg.embed_dim, n_classes)
    face = nets["face"]
    head = state.aux["face_aux"]
    opt_face = state.optimizer_for("face", face.module)
    opt_head = state.optimizer_for("face_aux", head)

    label_t = torch.from_numpy(labels)
    while state.step < steps:
        idx = _sample_indices(state.rng, len(faces), sched.batch_size)
        x_b = faces.select(idx)
        y_b = label_t[torch.as_tensor(idx, dtype=torch.long)]
        feats = face.module.features(x_b.data)
        logits = head.classifier(feats)
        ce = F.cross_entropy(logits, y_b)
        center = 0.5 * ((feats - head.centers[y_b]) ** 2).sum(dim=1).mean()
        loss = ce + center_loss_weight * center
        opt_face.zero_grad(set_to_none=True)
        opt_head.zero_grad(set_to_none=True)
        loss.backward()
        opt_face.step()
        opt_head.step()
        state.step += 1
        if log_sink is not None:
            log_sink(
                {
                    "step": state.step,
                    "stage": Stage.FACE_PRETRAIN.value,
                    "L_class": _scalar(ce),
                    "L_center": _scalar(center),
                }
            )

    if checkpoint_path is not None:
        save_checkpoint(state, nets, checkpoint_path)
    return face


JOINT_NET_NAMES = ("sr", "cr", "inv_cr", "disc_cr", "disc_inv_cr", "face")


def stage2_joint_finetune(
    sched: TrainingSchedule,
    nets: dict[str, NetworkHandle],
    data: dict[str, ImageBatch],
    weights: LossWeights | None = None,
    max_steps: int | None = None,
    log_sink: LogSink | None = None,
    resume_state: TrainState | None = None,
    checkpoint_path=None,
    phase_callback: Callable[[str], None] | None = None,
) -> dict[str, NetworkHandle]:
    """Fine-tune the cascaded generators under the composite objective.

    Each step consumes paired and unpaired batches (per the schedule ratio),
    updates the three discriminators on detached fakes, then updates the two
    generators on the weighted total. The inverse generator and the face
    embedder are frozen. Ablations: NO_CR removes the characteristic
    generator from the graph and optimizes the baseline objective, NO_SR_RI
    stops unpaired-branch gradients from reaching the super-resolver, and
    NO_UL gives the down-sample consistency term zero weight.
    """
    w = weights or LossWeights()
    missing = [name for name in JOINT_NET_NAMES if name not in nets]
    if missing:
        raise StateError(f"joint fine-tuning needs stage-1 networks, missing: {missing}")
    hr_data = data["hr"]
    genuine = data["genuine"]
    _nonempty(hr_data, "hr data")
    _nonempty(genuine, "genuine LR data")
    _require_role(hr_data, ImageRole.AUX_HR, "hr data")
    _require_role(genuine, ImageRole.GENUINE_LR, "genuine LR data")
    cfg = nets["sr"].config
    no_cr = Ablation.NO_CR in sched.ablation
    no_sr_ri = Ablation.NO_SR_RI in sched.ablation
    no_ul = Ablation.NO_UL in sched.ablation
    w_eff = replace(
        w,
        lambda_cr_sr=0.0 if no_ul else w.lambda_cr_sr,
        lambda_cr=0.0 if no_cr else w.lambda_cr,
    )

    if resume_state is not None:
        state = resume_state
        if state.stage is not Stage.JOINT:
            raise StateError(f"cannot resume stage {state.stage.value} as joint fine-tuning")
        if "disc_feat" not in nets:
            raise StateError("resumed joint state needs the feature discriminator")
    else:
        state = TrainState(
            Stage.JOINT,
            lr=sched.lr,
            rng=np.random.default_rng(_derive_seed(sched.seed, "data/joint")),
        )
        if "disc_feat" not in nets:
            torch.manual_seed(_derive_seed(sched.seed, "init/disc_feat"))
            nets["disc_feat"] = build_network(NetworkKind.DISC_FEAT, cfg)

    sr, cr, inv_cr = nets["sr"], nets["cr"], nets["inv_cr"]
    disc, disc_inv, face = nets["disc_cr"], nets["disc_inv_cr"], nets["face"]
    disc_feat = nets["disc_feat"]
    for p in face.module.parameters():
        p.requires_grad_(False)
    for p in inv_cr.module.parameters():
        p.requires_grad_(False)

    opt_sr = state.optimizer_for("sr", sr.module)
    opt_cr = None if no_cr else state.optimizer_for("cr", cr.module)
    opt_disc = None if no_cr else state.optimizer_for("disc_cr", disc.module)
    opt_disc_inv = None if no_cr else state.optimizer_for("disc_inv_cr", disc_inv.module)
    opt_feat = state.optimizer_for("disc_feat", disc_feat.module)

    spec = ResampleSpec(factor=hr_data.size // LR_SIZE)
    p_count, u_count = sched.paired_unpaired_ratio
    steps = _total_steps(sched.epochs_joint, max(len(hr_data), len(genuine)), sched.batch_size, max_steps)

    def _regulate(batch: ImageBatch) -> ImageBatch:
        return batch if no_cr else forward_cr(cr, batch)

    while state.step < steps:
        paired = [
            hr_data.select(_sample_indices(state.rng, len(hr_data), sched.batch_size))
            for _ in range(p_count)
        ]
        unpaired = [
            genuine.select(_sample_indices(state.rng, len(genuine), sched.batch_size))
            for _ in range(u_count)
        ]
        hr_b = paired[0]
        gen_b = unpaired[0]
        lr_aux_b = bicubic_downsample(hr_b, spec)

        # Discriminator phase: all fakes detached, one update per discriminator.
        with torch.no_grad():
            reg_d = _regulate(gen_b)
            sr_out_d = forward_sr(sr, reg_d)
            emb_fake_d = forward_face_embed(face, sr_out_d)
            emb_real_d = forward_face_embed(face, hr_b)
            real_img_scores = forward_disc(disc, lr_aux_b) if not no_cr else None
            real_feat_scores = forward_feature_disc(disc_feat, emb_real_d)
            pseudo_d = forward_cr(inv_cr, lr_aux_b) if not no_cr else None

        if not no_cr:
            d_loss, _ = gan_loss_cr(forward_disc(disc, lr_aux_b), forward_disc(disc, reg_d))
            opt_disc.zero_grad(set_to_none=True)
            d_loss.backward()
            opt_disc.step()

            d_inv_loss, _ = gan_loss_inverse_cr(
                forward_disc(disc_inv, gen_b), forward_disc(disc_inv, pseudo_d)
            )
            opt_disc_inv.zero_grad(set_to_none=True)
            d_inv_loss.backward()
            opt_disc_inv.step()

        feat_loss, _ = semantic_adaptation_loss(
            forward_feature_disc(disc_feat, emb_real_d),
            forward_feature_disc(disc_feat, emb_fake_d),
        )
        opt_feat.zero_grad(set_to_none=True)
        feat_loss.backward()
        opt_feat.step()
        if phase_callback is not None:
            phase_callback("disc")

        # Generator phase: one update for the super-resolver and one for the
        # characteristic generator, driven by the weighted total.
        opt_sr.zero_grad(set_to_none=True)
        if opt_cr is not None:
            opt_cr.zero_grad(set_to_none=True)

        l_sr_t = 0.0
        for hr_p in paired:
            lr_p = bicubic_downsample(hr_p, spec)
            l_sr_t = l_sr_t + sr_mse_loss(forward_sr(sr, lr_p), hr_p)
        l_sr_t = l_sr_t / p_count

        zero = torch.zeros(())
        l_gan_t, l_cr_t, l_cr_sr_t, l_cr_gan_t = zero, zero, zero, zero
        for gen_u in unpaired:
            reg = _regulate(gen_u)
            if no_sr_ri:
                for p in sr.module.parameters():
                    p.requires_grad_(False)
            sr_gen = forward_sr(sr, reg)
            if no_sr_ri:
                for p in sr.module.parameters():
                    p.requires_grad_(True)
            l_cr_sr_t = l_cr_sr_t + cr_sr_loss(sr_gen, reg, spec)
            _, feat_gen = semantic_adaptation_loss(
                real_feat_scores, forward_feature_disc(disc_feat, forward_face_embed(face, sr_gen))
            )
            l_cr_gan_t = l_cr_gan_t + feat_gen
            if not no_cr:
                _, img_gen = gan_loss_cr(real_img_scores, forward_disc(disc, reg))
                l_gan_t = l_gan_t + img_gen
                with torch.no_grad():
                    pseudo = forward_cr(inv_cr, lr_aux_b)
                round_trip = forward_cr(cr, pseudo)
                l_cr_t = l_cr_t + cr_composite_loss(lr_aux_b, round_trip, img_gen, w)
        l_gan_t = l_gan_t / u_count
        l_cr_t = l_cr_t / u_count
        l_cr_sr_t = l_cr_sr_t / u_count
        l_cr_gan_t = l_cr_gan_t / u_count

        total = composite_total(l_sr_t, l_cr_t, l_cr_sr_t, l_cr_gan_t, w_eff)
        total.backward()
        opt_sr.step()
        if opt_cr is not None:
            opt_cr.step()
        if phase_callback is not None:
            phase_callback("gen")

        state.step += 1
        if log_sink is not None:
            report = total_loss(
                _scalar(l_sr_t), _scalar(l_gan_t), _scalar(l_cr_t), _scalar(l_cr_sr_t), _scalar(l_cr_gan_t), w_eff
            )
            log_sink(report.record(state.step, Stage.JOINT.value))

    if checkpoint_path is not None:
        save_checkpoint(state, nets, checkpoint_path)
    return nets


def discriminator_accuracy(net: NetworkHandle, real: ImageBatch, fake: ImageBatch) -> float:
    """Fraction of held-out samples the discriminator classifies correctly."""
    with torch.no_grad():
        real_scores = forward_disc(net, real)
        fake_scores = forward_disc(net, fake)
    correct = int((real_scores > 0.5).sum()) + int((fake_scores <= 0.5).sum())
    return correct / (len(real) + len(fake))


def _aux_meta(module: nn.Module) -> dict:
    if isinstance(module, _FaceAuxHead):
        return {
            "type": "face_head",
            "embed_dim": module.classifier.in_features,
            "n_classes": module.classifier.out_features,
        }
    raise StateError(f"cannot serialize auxiliary module {type(module).__name__}")


def _build_aux(meta: dict) -> nn.Module:
    if meta.get("type") == "face_head":
        return _FaceAuxHead(meta["embed_dim"], meta["n_classes"])
    raise StateError(f"unknown auxiliary module type {meta.get('type')!r}")


def _load_module(module: nn.Module, arrays: dict, prefix: str) -> None:
    with torch.no_grad():
        for pname, param in module.named_parameters():
            key = prefix + pname
            if key not in arrays:
                raise StateError(f"checkpoint is missing array {key}")
            value = torch.from_numpy(arrays[key])
            if value.shape != param.shape:
                raise StateError(f"array {key} has shape {tuple(value.shape)}, expected {tuple(param.shape)}")
            param.copy_(value)


def save_checkpoint(state: TrainState, nets: dict[str, NetworkHandle], path) -> None:
    """Write parameters, optimizer moments, and the data-order generator state."""
    if not nets:
        raise StateError("nothing to checkpoint")
    cfg = next(iter(nets.values())).config
    arrays: dict[str, np.ndarray] = {}
    net_meta: dict[str, dict] = {}
    for name in sorted(nets):
        handle = nets[name]
        net_meta[name] = {"kind": handle.kind.value, "input_size": handle.input_size}
        for pname, p in handle.module.named_parameters():
            arrays[f"net/{name}/{pname}"] = p.detach().cpu().numpy()
    aux_meta: dict[str, dict] = {}
    for name in sorted(state.aux):
        aux_meta[name] = _aux_meta(state.aux[name])
        for pname, p in state.aux[name].named_parameters():
            arrays[f"aux/{name}/{pname}"] = p.detach().cpu().numpy()
    opt_names = sorted(state.optimizers)
    for name in opt_names:
        if name in nets:
            module = nets[name].module
        elif name in state.aux:
            module = state.aux[name]
        else:
            raise StateError(f"optimizer {name!r} has no matching network")
        pnames = [pn for pn, _ in module.named_parameters()]
        sd = state.optimizers[name].state_dict()
        for idx, entry in sd["state"].items():
            pname = pnames[idx]
            arrays[f"opt/{name}/{pname}/exp_avg"] = entry["exp_avg"].cpu().numpy()
            arrays[f"opt/{name}/{pname}/exp_avg_sq"] = entry["exp_avg_sq"].cpu().numpy()
            arrays[f"opt/{name}/{pname}/step"] = np.asarray(float(entry["step"]), dtype=np.float32)
    header = {
        "fingerprint": cfg.fingerprint(),
        "network_config": cfg.to_dict(),
        "stage": state.stage.value,
        "step": state.step,
        "lr": state.lr,
        "rng_state": state.rng.bit_generator.state,
        "networks": net_meta,
        "aux": aux_meta,
        "optimizers": opt_names,
    }
    write_container(path, header, arrays)


def load_checkpoint(
    path, expected_config: NetworkConfig | None = None
) -> tuple[TrainState, dict[str, NetworkHandle]]:
    """Rebuild networks and training state; the run continues bit-identically."""
    header, arrays = read_container(path)
    cfg = NetworkConfig.from_dict(header["network_config"])
    if cfg.fingerprint() != header["fingerprint"]:
        raise StateError("checkpoint fingerprint does not match its stored config")
    if expected_config is not None and expected_config.fingerprint() != header["fingerprint"]:
        raise StateError(
            f"checkpoint fingerprint {header['fingerprint']} does not match "
            f"the expected network config {expected_config.fingerprint()}"
        )
    nets: dict[str, NetworkHandle] = {}
    for name, meta in header["networks"].items():
        handle = build_network(NetworkKind(meta["kind"]), cfg, disc_input_size=meta["input_size"])
        _load_module(handle.module, arrays, f"net/{name}/")
        nets[name] = handle
    rng = np.random.default_rng()
    rng.bit_generator.state = header["rng_state"]
    state = TrainState(Stage(header["stage"]), lr=header["lr"], step=header["step"], rng=rng)
    for name, meta in header.get("aux", {}).items():
        module = _build_aux(meta)
        _load_module(module, arrays, f"aux/{name}/")
        state.aux[name] = module
    for name in header.get("optimizers", []):
        module = nets[name].module if name in nets else state.aux[name]
        params = [p for _, p in module.named_parameters()]
        opt = torch.optim.Adam(params, lr=state.lr)
        crafted = {}
        for idx, (pname, _) in enumerate(module.named_parameters()):
            key = f"opt/{name}/{pname}/exp_avg"
            if key in arrays:
                crafted[idx] = {
                    "step": torch.tensor(float(arrays[f"opt/{name}/{pname}/step"])),
                    "exp_avg": torch.from_numpy(arrays[key]),
                    "exp_avg_sq": torch.from_numpy(arrays[f"opt/{name}/{pname}/exp_avg_sq"]),
                }
        sd = opt.state_dict()
        sd["state"] = crafted
        opt.load_state_dict(sd)
        state.optimizers[name] = opt
    return state, nets
