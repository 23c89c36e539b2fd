"""Image batches, bicubic resampling, synthetic degradation, and PNG I/O.

Pixel values live in [-1, 1] everywhere inside the package; 8-bit RGB PNG is
the only on-disk format. Every operation here is a pure function of its
inputs (plus an explicit seed where randomness is involved), so results are
reproducible bit for bit and safe to compute concurrently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from scipy import fft as _fft
from scipy.ndimage import convolve1d

from .errors import NoDataError, ShapeError

LR_SIZE = 16
HR_SIZE = 64

_RANGE_TOL = 1e-6
_CATMULL_ROM_A = -0.5


class ImageRole(Enum):
    """Domain role of a batch: which leg of the pipeline it belongs to."""

    GENUINE_LR = "genuine_lr"
    ARTIFICIAL_LR = "artificial_lr"
    AUX_HR = "aux_hr"
    SUPER_RESOLVED = "super_resolved"

    @property
    def spatial_size(self) -> int:
        if self in (ImageRole.GENUINE_LR, ImageRole.ARTIFICIAL_LR):
            return LR_SIZE
        return HR_SIZE


@dataclass(frozen=True)
class ImageBatch:
    """A (batch, 3, H, W) tensor of images in [-1, 1] with a domain role.

    Batches are immutable after construction; all imaging operations return
    new batches.
    """

    data: torch.Tensor
    role: ImageRole

    def __post_init__(self) -> None:
        if self.data.ndim != 4:
            raise ShapeError(f"image batch must be rank 4, got rank {self.data.ndim}")
        n, c, h, w = self.data.shape
        if c != 3:
            raise ShapeError(f"image batch must have 3 channels, got {c}")
        if h != w:
            raise ShapeError(f"images must be square, got {h}x{w}")
        if h != self.role.spatial_size:
            raise ShapeError(
                f"role {self.role.value} requires size "
                f"{self.role.spatial_size}, got {h}"
            )
        if n > 0:
            values = self.data.detach()
            if not bool(torch.isfinite(values).all()):
                raise ShapeError("image batch contains non-finite values")
            lo = float(values.amin())
            hi = float(values.amax())
            if lo < -1.0 - _RANGE_TOL or hi > 1.0 + _RANGE_TOL:
                raise ShapeError(f"values outside [-1, 1]: min {lo}, max {hi}")

    def __len__(self) -> int:
        return int(self.data.shape[0])

    @property
    def size(self) -> int:
        return int(self.data.shape[-1])

    def select(self, indices) -> "ImageBatch":
        idx = torch.as_tensor(np.asarray(indices), dtype=torch.long)
        return ImageBatch(self.data[idx], self.role)

    def to_numpy(self) -> np.ndarray:
        return self.data.detach().cpu().numpy()


class ResampleKernel(Enum):
    BICUBIC = "bicubic"


@dataclass(frozen=True)
class ResampleSpec:
    """Integer-factor resampling request. The factor must divide the source size."""

    factor: int
    kernel: ResampleKernel = ResampleKernel.BICUBIC
    antialias: bool = True

    def __post_init__(self) -> None:
        if self.factor < 1:
            raise ShapeError(f"resample factor must be >= 1, got {self.factor}")


@dataclass(frozen=True)
class DegradationConfig:
    """Parameter ranges for manufacturing genuine-like LR images.

    Each image draws its own blur sigma (pixels at HR scale), additive noise
    sigma (in [-1, 1] value units), and compression quality percent. A quality
    of 100 disables the compression stage entirely. The same seed, config, and
    input produce bit-identical output.
    """

    blur_sigma_range: tuple[float, float] = (0.5, 2.5)
    noise_sigma_range: tuple[float, float] = (0.01, 0.05)
    compression_quality_range: tuple[int, int] = (30, 70)
    seed: int = 0

    def __post_init__(self) -> None:
        for name, (lo, hi) in (
            ("blur_sigma_range", self.blur_sigma_range),
            ("noise_sigma_range", self.noise_sigma_range),
            ("compression_quality_range", self.compression_quality_range),
        ):
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ShapeError(f"{name} must be a nonempty [min, max] range")
            if lo < 0:
                raise ShapeError(f"{name} must be nonnegative")
        qlo, qhi = self.compression_quality_range
        if int(qlo) != qlo or int(qhi) != qhi or qlo < 1:
            raise ShapeError("compression_quality_range must be integers >= 1")


def _cubic_kernel(t: np.ndarray) -> np.ndarray:
    a = _CATMULL_ROM_A
    at = np.abs(t)
    near = (a + 2.0) * at**3 - (a + 3.0) * at**2 + 1.0
    far = a * at**3 - 5.0 * a * at**2 + 8.0 * a * at - 4.0 * a
    return np.where(at <= 1.0, near, np.where(at < 2.0, far, 0.0))


_WEIGHTS_CACHE: dict[tuple[int, int, bool], np.ndarray] = {}


def resample_weights(n_in: int, n_out: int, antialias: bool = True) -> np.ndarray:
    """Row-stochastic (n_out, n_in) bicubic interpolation matrix for one axis.

    Uses the Catmull-Rom cubic; when down-sampling with antialias the kernel
    support is widened by the scale factor. Edges replicate.
    """
    key = (n_in, n_out, antialias)
    cached = _WEIGHTS_CACHE.get(key)
    if cached is not None:
        return cached
    scale = n_in / n_out
    filter_scale = scale if (antialias and scale > 1.0) else 1.0
    support = 2.0 * filter_scale
    weights = np.zeros((n_out, n_in), dtype=np.float64)
    for i in range(n_out):
        center = (i + 0.5) * scale - 0.5
        j0 = int(math.floor(center - support)) + 1
        j1 = int(math.floor(center + support))
        taps = np.arange(j0, j1 + 1)
        w = _cubic_kernel((taps - center) / filter_scale)
        np.add.at(weights[i], np.clip(taps, 0, n_in - 1), w)
        weights[i] /= weights[i].sum()
    weights.setflags(write=False)
    _WEIGHTS_CACHE[key] = weights
    return weights


_TORCH_WEIGHTS_CACHE: dict[tuple[int, int, bool, torch.dtype], torch.Tensor] = {}


def resample_plane(x: torch.Tensor, n_out: int, antialias: bool = True) -> torch.Tensor:
    """Separable bicubic resample of the trailing two dims, without clamping.

    Linear in ``x`` and differentiable, so it can sit inside loss graphs.
    """
    n_in = int(x.shape[-1])
    if int(x.shape[-2]) != n_in:
        raise ShapeError("resample_plane expects square spatial dims")
    if n_out == n_in:
        return x
    key = (n_in, n_out, antialias, x.dtype)
    w = _TORCH_WEIGHTS_CACHE.get(key)
    if w is None:
        w = torch.tensor(resample_weights(n_in, n_out, antialias), dtype=x.dtype)
        _TORCH_WEIGHTS_CACHE[key] = w
    return torch.matmul(torch.matmul(w, x), w.T)


def bicubic_downsample(x: ImageBatch, spec: ResampleSpec) -> ImageBatch:
    """Down-sample by ``spec.factor`` per axis; output clamped to [-1, 1]."""
    if spec.kernel is not ResampleKernel.BICUBIC:
        raise ShapeError(f"unsupported kernel {spec.kernel}")
    if x.size % spec.factor != 0:
        raise ShapeError(f"factor {spec.factor} does not divide size {x.size}")
    n_out = x.size // spec.factor
    if n_out == x.size:
        return x
    if n_out != LR_SIZE:
        raise ShapeError(f"down-sampled size {n_out} is not representable (need {LR_SIZE})")
    y = resample_plane(x.data, n_out, spec.antialias).clamp(-1.0, 1.0)
    return ImageBatch(y, ImageRole.ARTIFICIAL_LR)


def bicubic_upsample(x: ImageBatch, factor: int = 4) -> ImageBatch:
    """Plain bicubic up-sample, the conventional no-learning baseline."""
    n_out = x.size * factor
    if n_out != HR_SIZE:
        raise ShapeError(f"up-sampled size {n_out} is not representable (need {HR_SIZE})")
    y = resample_plane(x.data, n_out).clamp(-1.0, 1.0)
    return ImageBatch(y, ImageRole.SUPER_RESOLVED)


# Standard 8x8 luminance quantization table, scaled by the quality percent.
_QUANT_BASE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


def _quant_table(quality: int) -> np.ndarray:
    scale = 5000.0 / quality if quality < 50 else 200.0 - 2.0 * quality
    table = np.floor((_QUANT_BASE * scale + 50.0) / 100.0)
    return np.clip(table, 1.0, 255.0)


def _dct_quantize(img: np.ndarray, quality: int) -> np.ndarray:
    """Block-DCT coefficient quantization on one (3, H, W) image in [-1, 1]."""
    table = _quant_table(quality)
    x = (img + 1.0) * 127.5 - 128.0
    h, w = x.shape[-2:]
    for c in range(x.shape[0]):
        for by in range(0, h, 8):
            for bx in range(0, w, 8):
                block = x[c, by : by + 8, bx : bx + 8]
                coef = _fft.dctn(block, norm="ortho")
                coef = np.round(coef / table) * table
                x[c, by : by + 8, bx : bx + 8] = _fft.idctn(coef, norm="ortho")
    return (x + 128.0) / 127.5 - 1.0


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3.0 * sigma)))
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    out = convolve1d(img, kernel, axis=-1, mode="nearest")
    return convolve1d(out, kernel, axis=-2, mode="nearest")


def degrade_to_genuine_like(x_hr: ImageBatch, cfg: DegradationConfig) -> ImageBatch:
    """Manufacture a genuine-like LR batch from auxiliary HR images.

    Per image, in order: Gaussian blur, bicubic down-sample to 16x16, additive
    Gaussian noise, block-DCT quantization. Degenerate ranges turn each stage
    into an exact no-op, so an all-degenerate config reduces to plain bicubic
    down-sampling.
    """
    if x_hr.role is not ImageRole.AUX_HR:
        raise ShapeError(f"degradation input must have role AUX_HR, got {x_hr.role.value}")
    rng = np.random.default_rng(cfg.seed)
    ds = resample_weights(x_hr.size, LR_SIZE)
    arr = x_hr.to_numpy().astype(np.float64)
    out = np.empty((arr.shape[0], 3, LR_SIZE, LR_SIZE), dtype=np.float64)
    qlo, qhi = cfg.compression_quality_range
    for i in range(arr.shape[0]):
        blur_sigma = rng.uniform(*cfg.blur_sigma_range)
        noise_sigma = rng.uniform(*cfg.noise_sigma_range)
        quality = int(rng.integers(int(qlo), int(qhi) + 1))
        img = arr[i]
        if blur_sigma > 0.0:
            img = _gaussian_blur(img, blur_sigma)
        img = np.matmul(np.matmul(ds, img), ds.T)
        if noise_sigma > 0.0:
            img = img + rng.standard_normal(img.shape) * noise_sigma
        if quality < 100:
            img = _dct_quantize(img, quality)
        out[i] = img
    data = torch.from_numpy(np.clip(out, -1.0, 1.0).astype(np.float32))
    return ImageBatch(data, ImageRole.GENUINE_LR)


def _to_uint8(images_chw: np.ndarray) -> np.ndarray:
    scaled = np.round((images_chw + 1.0) * 127.5)
    return np.clip(scaled, 0.0, 255.0).astype(np.uint8)


def save_image_grid(x: ImageBatch, path) -> None:
    """Tile the batch row-major into a single 8-bit PNG."""
    n = len(x)
    if n == 0:
        raise NoDataError("cannot save an empty batch")
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    size = x.size
    pixels = _to_uint8(x.to_numpy())
    canvas = np.zeros((rows * size, cols * size, 3), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[r * size : (r + 1) * size, c * size : (c + 1) * size] = pixels[i].transpose(1, 2, 0)
    Image.fromarray(canvas, "RGB").save(Path(path), format="PNG")


def save_images(x: ImageBatch, directory, names: list[str]) -> None:
    """Write one PNG per image, keeping the given file names."""
    if len(names) != len(x):
        raise ShapeError("one name required per image")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pixels = _to_uint8(x.to_numpy())
    for img, name in zip(pixels, names):
        Image.fromarray(img.transpose(1, 2, 0), "RGB").save(directory / name, format="PNG")


def _decode_png(path: Path, target_size: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("RGB")
        w, h = im.size
        side = min(w, h)
        left = (w - side) // 2
        top = (h - side) // 2
        im = im.crop((left, top, left + side, top + side))
        if side != target_size:
            im = im.resize((target_size, target_size), Image.Resampling.BICUBIC)
        arr = np.asarray(im, dtype=np.float32)
    return arr.transpose(2, 0, 1) / 127.5 - 1.0


def _infer_role(target_size: int) -> ImageRole:
    if target_size == LR_SIZE:
        return ImageRole.GENUINE_LR
    if target_size == HR_SIZE:
        return ImageRole.AUX_HR
    raise ShapeError(f"target_size must be {LR_SIZE} or {HR_SIZE}, got {target_size}")


def load_image_folder(path, target_size: int, role: ImageRole | None = None) -> ImageBatch:
    """Decode every PNG in a directory into one batch.

    Files are read in sorted name order, center-cropped square, resized to
    ``target_size``, and mapped linearly from [0, 255] to [-1, 1]. Undecodable
    files are skipped with a warning naming the file.
    """
    batch, _, _ = load_labeled_image_folder(path, target_size, role)
    return batch


def load_labeled_image_folder(
    path, target_size: int, role: ImageRole | None = None
) -> tuple[ImageBatch, np.ndarray, list[str]]:
    """Like :func:`load_image_folder`, also returning identity labels.

    The identity of ``<id>_<n>.png`` is the part before the first underscore;
    files without an underscore are their own identity. Returns
    (batch, integer labels, file names), aligned.
    """
    role = role if role is not None else _infer_role(target_size)
    if role.spatial_size != target_size:
        raise ShapeError(f"role {role.value} does not allow size {target_size}")
    directory = Path(path)
    if not directory.is_dir():
        raise NoDataError(f"not a directory: {directory}")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise NoDataError(f"no PNG files in {directory}")
    images: list[np.ndarray] = []
    names: list[str] = []
    for f in files:
        try:
            images.append(_decode_png(f, target_size))
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
            warnings.warn(f"skipping undecodable image '{f.name}': {exc}", stacklevel=2)
            continue
        names.append(f.name)
    if not images:
        raise NoDataError(f"no decodable PNG files in {directory}")
    data = torch.from_numpy(np.stack(images)).clamp(-1.0, 1.0)
    identities = [n.split("_")[0] for n in names]
    id_order = sorted(set(identities))
    id_to_int = {ident: k for k, ident in enumerate(id_order)}
    labels = np.array([id_to_int[i] for i in identities], dtype=np.int64)
    return ImageBatch(data, role), labels, names
