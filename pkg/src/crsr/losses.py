"""All training loss terms as pure differentiable scalar functions.

Adversarial terms use the non-saturating generator form (-log D(fake)), which
shares its fixed point with the minimax objective but keeps gradients alive
early in training. Pixel losses are per-pixel-per-channel means so the shipped
weights are resolution independent. Probabilities are clamped to
[1e-7, 1 - 1e-7] before any log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import NumericError, ShapeError
from .imaging import ImageBatch, ResampleSpec, resample_plane

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    """Scalar weights of the composite objective."""

    lambda_inner: float = 0.2
    lambda_cr: float = 0.06
    lambda_cr_sr: float = 0.01
    lambda_cr_gan: float = 0.03

    def __post_init__(self) -> None:
        for name, v in (
            ("lambda_inner", self.lambda_inner),
            ("lambda_cr", self.lambda_cr),
            ("lambda_cr_sr", self.lambda_cr_sr),
            ("lambda_cr_gan", self.lambda_cr_gan),
        ):
            if not math.isfinite(v) or v < 0:
                raise ShapeError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    """Per-term scalars of one training step plus their weighted total."""

    l_sr: float
    l_gan: float
    l_cr: float
    l_cr_sr: float
    l_cr_gan: float
    l_total: float

    def record(self, step: int, stage: str) -> dict:
        return {
            "step": step,
            "stage": stage,
            "L_sr": self.l_sr,
            "L_gan": self.l_gan,
            "L_cr": self.l_cr,
            "L_cr_sr": self.l_cr_sr,
            "L_cr_gan": self.l_cr_gan,
            "L_total": self.l_total,
        }


def _clamp_probs(p: torch.Tensor) -> torch.Tensor:
    return torch.clamp(p, PROB_EPS, 1.0 - PROB_EPS)


def _mean_sq_diff(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.mean((a - b) ** 2)


def _data(x) -> torch.Tensor:
    return x.data if isinstance(x, ImageBatch) else x


def sr_mse_loss(sr, hr) -> torch.Tensor:
    """Mean squared pixel distance between a super-resolved batch and its target."""
    return _mean_sq_diff(_data(sr), _data(hr))


def _adversarial_pair(d_real: torch.Tensor, d_fake: torch.Tensor):
    d_real = _clamp_probs(d_real)
    d_fake = _clamp_probs(d_fake)
    disc_loss = -torch.log(d_real).mean() - torch.log(1.0 - d_fake).mean()
    gen_loss = -torch.log(d_fake).mean()
    return disc_loss, gen_loss


def gan_loss_cr(d_real: torch.Tensor, d_fake: torch.Tensor):
    """Adversarial pair for the forward domain transform.

    Real scores come from artificial LR images, fake scores from transformed
    genuine LR images. Returns (discriminator loss, generator loss).
    """
    return _adversarial_pair(d_real, d_fake)


def gan_loss_inverse_cr(d_real_genuine: torch.Tensor, d_fake_pseudo: torch.Tensor):
    """Adversarial pair for the inverse transform (genuine real, pseudo-genuine fake)."""
    return _adversarial_pair(d_real_genuine, d_fake_pseudo)


def cr_composite_loss(lr_aux, round_trip, gen_gan_term, w: LossWeights) -> torch.Tensor:
    """Round-trip reconstruction error plus the weighted generator GAN term."""
    recon = _mean_sq_diff(_data(lr_aux), _data(round_trip))
    return recon + w.lambda_inner * gen_gan_term


def cr_sr_loss(sr_of_regulated, regulated, spec: ResampleSpec) -> torch.Tensor:
    """Down-sample consistency: the resolved image, shrunk back, must match its input.

    Differentiable through the (unclamped) bicubic down-sampler.
    """
    sr_t = _data(sr_of_regulated)
    reg_t = _data(regulated)
    if sr_t.shape[-1] != reg_t.shape[-1] * spec.factor or sr_t.shape[-2] != reg_t.shape[-2] * spec.factor:
        raise ShapeError(
            f"resolved size {tuple(sr_t.shape[-2:])} is not {spec.factor}x the "
            f"regulated size {tuple(reg_t.shape[-2:])}"
        )
    down = resample_plane(sr_t, reg_t.shape[-1], spec.antialias)
    return _mean_sq_diff(down, reg_t)


def semantic_adaptation_loss(d_real_feat: torch.Tensor, d_fake_feat: torch.Tensor):
    """Adversarial pair in face-embedding space (auxiliary HR real, resolved fake)."""
    return _adversarial_pair(d_real_feat, d_fake_feat)


def _finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise NumericError(f"loss term {name} is not finite: {value}")
    return value


def composite_total(l_sr, l_cr, l_cr_sr, l_cr_gan, w: LossWeights):
    """The weighted sum defining the joint objective; works on floats or tensors."""
    return l_sr + w.lambda_cr * l_cr + w.lambda_cr_sr * l_cr_sr + w.lambda_cr_gan * l_cr_gan


def total_loss(
    l_sr: float,
    l_gan: float,
    l_cr: float,
    l_cr_sr: float,
    l_cr_gan: float,
    w: LossWeights,
) -> LossReport:
    """Assemble the per-step report; the total is the weighted sum of its terms."""
    l_sr = _finite("L_sr", l_sr)
    l_gan = _finite("L_gan", l_gan)
    l_cr = _finite("L_cr", l_cr)
    l_cr_sr = _finite("L_cr_sr", l_cr_sr)
    l_cr_gan = _finite("L_cr_gan", l_cr_gan)
    total = composite_total(l_sr, l_cr, l_cr_sr, l_cr_gan, w)
    return LossReport(l_sr, l_gan, l_cr, l_cr_sr, l_cr_gan, float(total))


def baseline_loss(l_sr: float, l_cr_sr: float, l_cr_gan: float, w: LossWeights) -> float:
    """Joint objective with the round-trip term removed (the no-transform baseline)."""
    l_sr = _finite("L_sr", l_sr)
    l_cr_sr = _finite("L_cr_sr", l_cr_sr)
    l_cr_gan = _finite("L_cr_gan", l_cr_gan)
    return float(l_sr + w.lambda_cr_sr * l_cr_sr + w.lambda_cr_gan * l_cr_gan)
