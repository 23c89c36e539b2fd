"""Quantitative evaluation: Fréchet distance, PSNR, SSIM, and rank-1 recognition.

PSNR and SSIM follow the conventional 8-bit reporting convention: batches in
[-1, 1] are mapped to [0, 255] (without re-quantization) before measuring.
All functions are pure and thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy import fft as _fft
from scipy.ndimage import convolve1d

from .errors import ConfigError, NoDataError, NumericError, ShapeError
from .imaging import ImageBatch

_EIG_TOL = 1e-6
_PSNR_CAP_DB = 100.0

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = (0.01 * 255.0) ** 2
_SSIM_C2 = (0.03 * 255.0) ** 2


@dataclass(frozen=True)
class GaussianStats:
    """Sufficient statistics (mean, covariance, count) of an embedding set."""

    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self) -> None:
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise ShapeError("mean must be (d,) and cov (d, d)")
        if self.n < 2:
            raise NoDataError("Gaussian statistics need at least 2 samples")
        if float(np.abs(self.cov - self.cov.T).max()) > 1e-8:
            raise ShapeError("covariance must be symmetric")

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def _as_2d_array(embeddings) -> np.ndarray:
    if isinstance(embeddings, torch.Tensor):
        embeddings = embeddings.detach().cpu().numpy()
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"embeddings must be (n, d), got shape {arr.shape}")
    return arr


def gaussian_stats(embeddings) -> GaussianStats:
    """Sample mean and unbiased sample covariance of an (n, d) embedding set."""
    arr = _as_2d_array(embeddings)
    n = arr.shape[0]
    if n < 2:
        raise NoDataError(f"need at least 2 embeddings, got {n}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / (n - 1)
    cov = (cov + cov.T) / 2.0
    return GaussianStats(mean=mean, cov=cov, n=n)


def pixel_gaussian_stats(x: ImageBatch) -> GaussianStats:
    """Gaussian statistics of flattened pixel vectors, for LR-domain distances."""
    n = len(x)
    if n < 2:
        raise NoDataError(f"need at least 2 images, got {n}")
    return gaussian_stats(x.to_numpy().reshape(n, -1))


def lr_characteristic_features(x: ImageBatch) -> np.ndarray:
    """Per-image descriptor of LR imaging characteristics, shape (n, 10).

    Channel means, log channel spreads, log gradient energies, log Laplacian
    energy, and the log high-frequency DCT energy fraction: the statistics
    that blur, noise, and compression move. Log scaling keeps every dimension
    comparably sized, so the Fréchet distance over these features stays well
    conditioned at small sample counts where full pixel covariances would be
    hopelessly rank-deficient.
    """
    imgs = x.to_numpy().astype(np.float64)
    feats = []
    for img in imgs:
        ch_mean = img.mean(axis=(1, 2))
        ch_spread = np.log(img.std(axis=(1, 2)) + 1e-6)
        grad_x = np.log(np.abs(np.diff(img, axis=2)).mean() + 1e-6)
        grad_y = np.log(np.abs(np.diff(img, axis=1)).mean() + 1e-6)
        lap = (
            4.0 * img[:, 1:-1, 1:-1]
            - img[:, :-2, 1:-1]
            - img[:, 2:, 1:-1]
            - img[:, 1:-1, :-2]
            - img[:, 1:-1, 2:]
        )
        lap_energy = np.log((lap**2).mean() + 1e-9)
        luma = 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]
        coef = _fft.dctn(luma, norm="ortho")
        high = (coef[8:, :] ** 2).sum() + (coef[:8, 8:] ** 2).sum()
        hf_fraction = np.log(high / ((coef**2).sum() + 1e-12) + 1e-9)
        feats.append(
            np.concatenate([ch_mean, ch_spread, [grad_x, grad_y, lap_energy, hf_fraction]])
        )
    return np.stack(feats)


def lr_characteristic_stats(x: ImageBatch) -> GaussianStats:
    """Gaussian statistics of :func:`lr_characteristic_features`."""
    return gaussian_stats(lr_characteristic_features(x))


def _psd_sqrt(cov: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(cov)
    if float(vals.min()) < -_EIG_TOL:
        raise NumericError(f"covariance not PSD: min eigenvalue {vals.min()}")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid(a: GaussianStats, b: GaussianStats) -> float:
    """Fréchet distance between two Gaussians.

    Computed as ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), with the
    matrix square root taken through the symmetric form
    S_a^(1/2) S_b S_a^(1/2) for numerical stability.
    """
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    sqrt_a = _psd_sqrt(a.cov)
    inner = sqrt_a @ b.cov @ sqrt_a
    inner = (inner + inner.T) / 2.0
    vals = np.linalg.eigvalsh(inner)
    if float(vals.min()) < -_EIG_TOL * max(1.0, float(np.abs(vals).max())):
        raise NumericError(f"cross term not PSD: min eigenvalue {vals.min()}")
    trace_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    delta = a.mean - b.mean
    value = float(delta @ delta + np.trace(a.cov) + np.trace(b.cov) - 2.0 * trace_sqrt)
    if value < -_EIG_TOL:
        raise NumericError(f"negative squared Fréchet distance {value}")
    return max(value, 0.0)


def _to_255(x: ImageBatch) -> np.ndarray:
    return (x.to_numpy().astype(np.float64) + 1.0) * 127.5


def _check_same_shape(x: ImageBatch, y: ImageBatch) -> None:
    if x.data.shape != y.data.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.data.shape)} vs {tuple(y.data.shape)}")


def psnr(x: ImageBatch, y: ImageBatch) -> float:
    """Peak signal-to-noise ratio in dB over the whole batch (8-bit convention).

    Identical batches return the 100 dB sentinel.
    """
    _check_same_shape(x, y)
    mse = float(np.mean((_to_255(x) - _to_255(y)) ** 2))
    if mse == 0.0:
        return _PSNR_CAP_DB
    return 10.0 * math.log10(255.0**2 / mse)


def _luminance(img255: np.ndarray) -> np.ndarray:
    return 0.299 * img255[:, 0] + 0.587 * img255[:, 1] + 0.114 * img255[:, 2]


def _ssim_window() -> np.ndarray:
    radius = (_SSIM_WINDOW - 1) // 2
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(offsets**2) / (2.0 * _SSIM_SIGMA**2))
    return g / g.sum()


def _windowed_mean(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    pad = (_SSIM_WINDOW - 1) // 2
    out = convolve1d(a, kernel, axis=-1, mode="nearest")
    out = convolve1d(out, kernel, axis=-2, mode="nearest")
    return out[..., pad:-pad, pad:-pad]


def ssim(x: ImageBatch, y: ImageBatch) -> float:
    """Mean local structural similarity on the luminance channel.

    Uses an 11x11 Gaussian window (sigma 1.5) in the 8-bit convention and
    averages the SSIM map over the region where the window fits entirely.
    """
    _check_same_shape(x, y)
    if x.size < _SSIM_WINDOW:
        raise ShapeError(f"images of size {x.size} are smaller than the {_SSIM_WINDOW} window")
    lx = _luminance(_to_255(x))
    ly = _luminance(_to_255(y))
    kernel = _ssim_window()
    ux = _windowed_mean(lx, kernel)
    uy = _windowed_mean(ly, kernel)
    uxx = _windowed_mean(lx * lx, kernel)
    uyy = _windowed_mean(ly * ly, kernel)
    uxy = _windowed_mean(lx * ly, kernel)
    vx = uxx - ux * ux
    vy = uyy - uy * uy
    vxy = uxy - ux * uy
    score = ((2.0 * ux * uy + _SSIM_C1) * (2.0 * vxy + _SSIM_C2)) / (
        (ux * ux + uy * uy + _SSIM_C1) * (vx + vy + _SSIM_C2)
    )
    return float(score.mean())


@dataclass(frozen=True)
class RecognitionSplit:
    """Gallery and probe embeddings with integer identities.

    Every probe identity must appear in the gallery and all embeddings must be
    unit-norm, so cosine similarity is a plain dot product.
    """

    gallery_embeddings: np.ndarray
    gallery_ids: np.ndarray
    probe_embeddings: np.ndarray
    probe_ids: np.ndarray

    def __post_init__(self) -> None:
        g = _as_2d_array(self.gallery_embeddings)
        p = _as_2d_array(self.probe_embeddings)
        if g.shape[1] != p.shape[1]:
            raise ShapeError("gallery and probe embedding dims differ")
        if g.shape[0] != np.asarray(self.gallery_ids).size:
            raise ShapeError("one identity required per gallery embedding")
        if p.shape[0] != np.asarray(self.probe_ids).size:
            raise ShapeError("one identity required per probe embedding")
        for name, arr in (("gallery", g), ("probe", p)):
            if arr.shape[0] == 0:
                continue
            norms = np.linalg.norm(arr, axis=1)
            if float(np.abs(norms - 1.0).max()) > 1e-3:
                raise ConfigError(f"{name} embeddings must be unit-norm")
        missing = set(np.asarray(self.probe_ids).tolist()) - set(
            np.asarray(self.gallery_ids).tolist()
        )
        if missing:
            raise ConfigError(f"probe identities missing from gallery: {sorted(missing)}")


def rank1(split: RecognitionSplit) -> float:
    """Fraction of probes whose nearest gallery embedding shares their identity.

    Nearest is by cosine similarity; ties break toward the lowest gallery index.
    """
    g = _as_2d_array(split.gallery_embeddings)
    p = _as_2d_array(split.probe_embeddings)
    if g.shape[0] == 0 or p.shape[0] == 0:
        raise NoDataError("gallery and probes must be nonempty")
    sims = p @ g.T
    nearest = np.argmax(sims, axis=1)
    gallery_ids = np.asarray(split.gallery_ids)
    probe_ids = np.asarray(split.probe_ids)
    return float(np.mean(gallery_ids[nearest] == probe_ids))
