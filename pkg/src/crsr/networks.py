"""The seven parameterized networks and their forward contracts.

Two characteristic generators map 16x16 images between the genuine and
artificial LR domains, an SR generator lifts 16x16 to 64x64, two image
discriminators and one feature discriminator score realness, and a face
embedder produces unit-norm identity features. Residual blocks use instance
normalization so inference is independent of batch composition, and all
nonlinearities are smooth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import torch
from torch import nn

from .errors import ShapeError
from .imaging import HR_SIZE, LR_SIZE, ImageBatch, ImageRole, resample_plane

_PROB_EPS = 1e-7
_SKIP_CLIP = 0.995


class NetworkKind(Enum):
    SR_GEN = "sr_gen"
    CR_GEN = "cr_gen"
    INV_CR_GEN = "inv_cr_gen"
    DISC_CR = "disc_cr"
    DISC_INV_CR = "disc_inv_cr"
    DISC_FEAT = "disc_feat"
    FACE_EMBED = "face_embed"


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 32
    cr_res_blocks: int = 3
    sr_group_blocks: tuple[int, ...] = (12, 3, 2)
    disc_res_blocks: int = 6
    feat_disc_fc_layers: int = 5
    embed_dim: int = 128
    sr_image_gan: bool = False

    def __post_init__(self) -> None:
        counts = (
            self.base_channels,
            self.cr_res_blocks,
            self.disc_res_blocks,
            self.feat_disc_fc_layers,
            self.embed_dim,
            *self.sr_group_blocks,
        )
        if len(self.sr_group_blocks) < 1:
            raise ShapeError("sr_group_blocks must name at least one group")
        if any(int(c) != c or c < 1 for c in counts):
            raise ShapeError("all network size counts must be integers >= 1")

    @property
    def sr_scale(self) -> int:
        return 2 ** (len(self.sr_group_blocks) - 1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sr_group_blocks"] = list(self.sr_group_blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        d = dict(d)
        d["sr_group_blocks"] = tuple(d["sr_group_blocks"])
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class NetworkHandle:
    """A kind-tagged module plus the config it was built from."""

    kind: NetworkKind
    module: nn.Module
    config: NetworkConfig
    input_size: int

    @property
    def parameters(self) -> dict[str, torch.Tensor]:
        return dict(self.module.named_parameters())


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm1 = nn.InstanceNorm2d(channels, affine=True)
        self.act = nn.GELU()
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.norm2 = nn.InstanceNorm2d(channels, affine=True)

    def forward(self, x):
        h = self.act(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return x + h


class CharacteristicGenerator(nn.Module):
    """16x16 -> 16x16 domain transformer with a global residual path.

    The output head is tanh over a damped learned correction plus the
    (inverse tanh of the) input. The correction branch starts at zero, so a
    fresh generator is the identity map, and the damping factor keeps each
    optimizer step from moving the output distribution faster than the
    adversary can track, which is what makes desk-scale adversarial domain
    alignment settle instead of oscillate.
    """

    CORRECTION_GAIN = 0.1

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        self.head = nn.Conv2d(3, c, 3, padding=1)
        self.act = nn.GELU()
        self.body = nn.Sequential(*[_ResidualBlock(c) for _ in range(cfg.cr_res_blocks)])
        self.tail = nn.Conv2d(c, 3, 3, padding=1)
        nn.init.zeros_(self.tail.weight)
        nn.init.zeros_(self.tail.bias)

    def forward(self, x):
        delta = self.tail(self.body(self.act(self.head(x))))
        return torch.tanh(self.CORRECTION_GAIN * delta + torch.atanh(x.clamp(-_SKIP_CLIP, _SKIP_CLIP)))


class SRGenerator(nn.Module):
    """16x16 -> 64x64 super-resolver: residual groups with x2 sub-pixel steps.

    Resolution doubles after every group but the last; a bicubic skip carries
    the input to the output scale so the learned part is a residual on top of
    plain interpolation.
    """

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        self.scale = cfg.sr_scale
        self.head = nn.Conv2d(3, c, 3, padding=1)
        self.act = nn.GELU()
        self.groups = nn.ModuleList(
            nn.Sequential(*[_ResidualBlock(c) for _ in range(n)]) for n in cfg.sr_group_blocks
        )
        self.upsamplers = nn.ModuleList(
            nn.Sequential(nn.Conv2d(c, 4 * c, 3, padding=1), nn.PixelShuffle(2), nn.GELU())
            for _ in range(len(cfg.sr_group_blocks) - 1)
        )
        self.tail = nn.Conv2d(c, 3, 3, padding=1)

    def forward(self, x):
        skip = resample_plane(x, x.shape[-1] * self.scale).clamp(-_SKIP_CLIP, _SKIP_CLIP)
        h = self.act(self.head(x))
        for i, group in enumerate(self.groups):
            h = group(h) + h
            if i < len(self.upsamplers):
                h = self.upsamplers[i](h)
        return torch.tanh(self.tail(h) + torch.atanh(skip))


class ImageDiscriminator(nn.Module):
    """Realness score for one image: residual trunk, global pooling, one logit."""

    def __init__(self, cfg: NetworkConfig, input_size: int = LR_SIZE):
        super().__init__()
        c = cfg.base_channels
        self.input_size = input_size
        self.head = nn.Conv2d(3, c, 3, padding=1)
        self.act = nn.GELU()
        layers: list[nn.Module] = []
        pools_left = max(0, int.bit_length(input_size // 4) - 1)
        for i in range(cfg.disc_res_blocks):
            layers.append(_ResidualBlock(c))
            if i % 2 == 1 and pools_left > 0:
                layers.append(nn.AvgPool2d(2))
                pools_left -= 1
        self.body = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(c, 1)

    def forward(self, x):
        h = self.body(self.act(self.head(x)))
        return torch.sigmoid(self.fc(self.pool(h).flatten(1))).squeeze(-1)


class FeatureDiscriminator(nn.Module):
    """Realness score for one embedding row, a small fully connected stack."""

    def __init__(self, cfg: NetworkConfig, hidden: int = 128):
        super().__init__()
        dims = [cfg.embed_dim] + [hidden] * (cfg.feat_disc_fc_layers - 1) + [1]
        layers: list[nn.Module] = []
        for i in range(len(dims) - 1):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                layers.append(nn.GELU())
        self.net = nn.Sequential(*layers)

    def forward(self, f):
        return torch.sigmoid(self.net(f)).squeeze(-1)


class FaceEmbedder(nn.Module):
    """64x64 face image -> unit-norm identity embedding."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        c = cfg.base_channels
        self.stem = nn.Sequential(
            nn.Conv2d(3, c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(c, affine=True),
            nn.GELU(),
            nn.Conv2d(c, 2 * c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(2 * c, affine=True),
            nn.GELU(),
            nn.Conv2d(2 * c, 4 * c, 3, stride=2, padding=1),
            nn.InstanceNorm2d(4 * c, affine=True),
            nn.GELU(),
        )
        self.fc = nn.Linear(4 * c * (HR_SIZE // 8) ** 2, cfg.embed_dim)

    def features(self, x):
        return self.fc(self.stem(x).flatten(1))

    def forward(self, x):
        f = self.features(x)
        return f / f.norm(dim=1, keepdim=True).clamp_min(1e-12)


def build_network(
    kind: NetworkKind, config: NetworkConfig, disc_input_size: int = LR_SIZE
) -> NetworkHandle:
    if kind in (NetworkKind.CR_GEN, NetworkKind.INV_CR_GEN):
        return NetworkHandle(kind, CharacteristicGenerator(config), config, LR_SIZE)
    if kind is NetworkKind.SR_GEN:
        return NetworkHandle(kind, SRGenerator(config), config, LR_SIZE)
    if kind in (NetworkKind.DISC_CR, NetworkKind.DISC_INV_CR):
        return NetworkHandle(kind, ImageDiscriminator(config, disc_input_size), config, disc_input_size)
    if kind is NetworkKind.DISC_FEAT:
        return NetworkHandle(kind, FeatureDiscriminator(config), config, config.embed_dim)
    if kind is NetworkKind.FACE_EMBED:
        return NetworkHandle(kind, FaceEmbedder(config), config, HR_SIZE)
    raise ShapeError(f"unknown network kind {kind}")


def _require_kind(net: NetworkHandle, *kinds: NetworkKind) -> None:
    if net.kind not in kinds:
        raise ShapeError(f"expected network of kind {[k.value for k in kinds]}, got {net.kind.value}")


def _require_spatial(x: ImageBatch, size: int) -> None:
    if x.size != size:
        raise ShapeError(f"expected {size}x{size} input, got {x.size}x{x.size}")


def forward_cr(net: NetworkHandle, x: ImageBatch) -> ImageBatch:
    """Apply a characteristic generator; the domain role flips accordingly."""
    _require_kind(net, NetworkKind.CR_GEN, NetworkKind.INV_CR_GEN)
    if x.role not in (ImageRole.GENUINE_LR, ImageRole.ARTIFICIAL_LR):
        raise ShapeError(f"characteristic generators take LR batches, got role {x.role.value}")
    _require_spatial(x, LR_SIZE)
    out_role = ImageRole.ARTIFICIAL_LR if net.kind is NetworkKind.CR_GEN else ImageRole.GENUINE_LR
    return ImageBatch(net.module(x.data), out_role)


def forward_sr(net: NetworkHandle, x: ImageBatch) -> ImageBatch:
    """Super-resolve a 16x16 batch to 64x64."""
    _require_kind(net, NetworkKind.SR_GEN)
    _require_spatial(x, LR_SIZE)
    return ImageBatch(net.module(x.data), ImageRole.SUPER_RESOLVED)


def forward_disc(net: NetworkHandle, x: ImageBatch) -> torch.Tensor:
    """Score each image with a probability strictly inside (0, 1)."""
    _require_kind(net, NetworkKind.DISC_CR, NetworkKind.DISC_INV_CR)
    _require_spatial(x, net.input_size)
    return net.module(x.data).clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def forward_feature_disc(net: NetworkHandle, f: torch.Tensor) -> torch.Tensor:
    """Score each embedding row with a probability strictly inside (0, 1)."""
    _require_kind(net, NetworkKind.DISC_FEAT)
    if f.ndim != 2 or f.shape[1] != net.config.embed_dim:
        raise ShapeError(
            f"expected embeddings of shape (n, {net.config.embed_dim}), got {tuple(f.shape)}"
        )
    return net.module(f).clamp(_PROB_EPS, 1.0 - _PROB_EPS)


def forward_face_embed(net: NetworkHandle, x: ImageBatch) -> torch.Tensor:
    """Embed a 64x64 batch into unit-norm identity features."""
    _require_kind(net, NetworkKind.FACE_EMBED)
    _require_spatial(x, HR_SIZE)
    return net.module(x.data)


def count_parameters(net: NetworkHandle) -> int:
    """Exact number of scalar parameters in the network."""
    return sum(p.numel() for p in net.module.parameters())
