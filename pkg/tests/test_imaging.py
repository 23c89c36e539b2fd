import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from crsr.errors import NoDataError, ShapeError
from crsr.imaging import (
    DegradationConfig,
    ImageBatch,
    ImageRole,
    ResampleSpec,
    bicubic_downsample,
    bicubic_upsample,
    degrade_to_genuine_like,
    load_image_folder,
    load_labeled_image_folder,
    resample_weights,
    save_image_grid,
)
from tests.conftest import random_batch


def cubic_catmull_rom(t: float) -> float:
    a = -0.5
    t = abs(t)
    if t <= 1.0:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2.0:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def reference_downsample(img: np.ndarray, factor: int) -> np.ndarray:
    """Direct per-pixel convolution with the scaled Catmull-Rom kernel."""
    n_in = img.shape[-1]
    n_out = n_in // factor
    out = np.zeros(img.shape[:-2] + (n_out, n_out), dtype=np.float64)
    for i in range(n_out):
        cy = (i + 0.5) * factor - 0.5
        for j in range(n_out):
            cx = (j + 0.5) * factor - 0.5
            acc = np.zeros(img.shape[:-2])
            wsum = 0.0
            for y in range(int(np.floor(cy - 2 * factor)) + 1, int(np.floor(cy + 2 * factor)) + 1):
                wy = cubic_catmull_rom((y - cy) / factor)
                if wy == 0.0:
                    continue
                yy = min(max(y, 0), n_in - 1)
                for x in range(int(np.floor(cx - 2 * factor)) + 1, int(np.floor(cx + 2 * factor)) + 1):
                    wx = cubic_catmull_rom((x - cx) / factor)
                    if wx == 0.0:
                        continue
                    xx = min(max(x, 0), n_in - 1)
                    acc += wy * wx * img[..., yy, xx]
                    wsum += wy * wx
            out[..., i, j] = acc / wsum
    return out


class TestImageBatch:
    def test_rejects_wrong_channel_count(self):
        with pytest.raises(ShapeError):
            ImageBatch(torch.zeros(1, 1, 16, 16), ImageRole.GENUINE_LR)

    def test_rejects_role_size_mismatch(self):
        with pytest.raises(ShapeError):
            ImageBatch(torch.zeros(1, 3, 64, 64), ImageRole.GENUINE_LR)

    def test_rejects_out_of_range(self):
        with pytest.raises(ShapeError):
            ImageBatch(torch.full((1, 3, 16, 16), 1.5), ImageRole.GENUINE_LR)

    def test_rejects_non_finite(self):
        data = torch.zeros(1, 3, 16, 16)
        data[0, 0, 0, 0] = float("nan")
        with pytest.raises(ShapeError):
            ImageBatch(data, ImageRole.GENUINE_LR)


class TestBicubicDownsample:
    def test_constant_image_is_fixed_point(self):
        batch = ImageBatch(torch.full((2, 3, 64, 64), 0.5), ImageRole.AUX_HR)
        out = bicubic_downsample(batch, ResampleSpec(factor=4))
        assert torch.allclose(out.data, torch.full((2, 3, 16, 16), 0.5), atol=1e-6)

    def test_factor_four_shape(self):
        batch = random_batch(64, n=5)
        out = bicubic_downsample(batch, ResampleSpec(factor=4))
        assert out.data.shape == (5, 3, 16, 16)
        assert out.role is ImageRole.ARTIFICIAL_LR

    def test_non_divisible_size_raises(self):
        batch = random_batch(64)
        with pytest.raises(ShapeError):
            bicubic_downsample(batch, ResampleSpec(factor=5))

    def test_matches_direct_convolution_oracle(self):
        batch = random_batch(64, n=2, seed=7)
        out = bicubic_downsample(batch, ResampleSpec(factor=4))
        ref = reference_downsample(batch.to_numpy().astype(np.float64), 4)
        ref = np.clip(ref, -1.0, 1.0)
        assert np.abs(out.to_numpy() - ref).max() <= 1e-3

    @given(
        a=st.floats(-1.0, 1.0),
        b=st.floats(-1.0, 1.0),
        seed=st.integers(0, 10_000),
    )
    def test_linearity_on_unclamped_inputs(self, a, b, seed):
        rng = np.random.default_rng(seed)
        x = torch.from_numpy(rng.uniform(-0.4, 0.4, (1, 3, 64, 64)))
        y = torch.from_numpy(rng.uniform(-0.4, 0.4, (1, 3, 64, 64)))
        from crsr.imaging import resample_plane

        mixed = resample_plane(a * x + b * y, 16)
        separate = a * resample_plane(x, 16) + b * resample_plane(y, 16)
        assert torch.abs(mixed - separate).max() <= 1e-6

    def test_rows_are_normalized(self):
        w = resample_weights(64, 16)
        assert np.abs(w.sum(axis=1) - 1.0).max() < 1e-12


class TestDegradation:
    def test_degenerate_config_equals_downsample(self, toy_faces):
        hr, _ = toy_faces
        cfg = DegradationConfig(
            blur_sigma_range=(0.0, 0.0),
            noise_sigma_range=(0.0, 0.0),
            compression_quality_range=(100, 100),
            seed=3,
        )
        degraded = degrade_to_genuine_like(hr, cfg)
        plain = bicubic_downsample(hr, ResampleSpec(factor=4))
        assert torch.abs(degraded.data - plain.data).max() <= 1e-6

    def test_constant_image_survives_blur(self):
        batch = ImageBatch(torch.full((2, 3, 64, 64), 0.25), ImageRole.AUX_HR)
        cfg = DegradationConfig(
            blur_sigma_range=(1.5, 1.5),
            noise_sigma_range=(0.0, 0.0),
            compression_quality_range=(100, 100),
            seed=0,
        )
        out = degrade_to_genuine_like(batch, cfg)
        assert torch.abs(out.data - 0.25).max() <= 1e-6

    def test_same_seed_is_bit_identical(self, toy_faces):
        hr, _ = toy_faces
        cfg = DegradationConfig(seed=11)
        a = degrade_to_genuine_like(hr, cfg)
        b = degrade_to_genuine_like(hr, cfg)
        assert torch.equal(a.data, b.data)
        assert a.role is ImageRole.GENUINE_LR

    def test_different_seeds_differ(self, toy_faces):
        hr, _ = toy_faces
        a = degrade_to_genuine_like(hr, DegradationConfig(seed=1))
        b = degrade_to_genuine_like(hr, DegradationConfig(seed=2))
        assert not torch.equal(a.data, b.data)

    def test_requires_hr_role(self):
        batch = random_batch(16)
        with pytest.raises(ShapeError):
            degrade_to_genuine_like(batch, DegradationConfig())

    def test_invalid_range_rejected(self):
        with pytest.raises(ShapeError):
            DegradationConfig(blur_sigma_range=(2.0, 1.0))


class TestPngIO:
    def test_save_single_and_reload_within_quantization(self, tmp_path):
        batch = random_batch(64, n=1, seed=5)
        path = tmp_path / "one.png"
        save_image_grid(batch, path)
        loaded = load_image_folder(tmp_path, 64)
        assert torch.abs(loaded.data - batch.data).max() <= 1.0 / 255.0 * 2.0

    def test_grid_tiling_dimensions(self, tmp_path):
        batch = random_batch(16, n=4)
        path = tmp_path / "grid.png"
        save_image_grid(batch, path)
        with Image.open(path) as im:
            assert im.size == (32, 32)

    def test_low_endpoint_maps_to_zero(self, tmp_path):
        batch = ImageBatch(torch.full((1, 3, 16, 16), -1.0), ImageRole.GENUINE_LR)
        path = tmp_path / "black.png"
        save_image_grid(batch, path)
        with Image.open(path) as im:
            assert np.asarray(im).max() == 0

    def test_empty_batch_rejected(self):
        batch = ImageBatch(torch.zeros(0, 3, 16, 16), ImageRole.GENUINE_LR)
        with pytest.raises(NoDataError):
            save_image_grid(batch, "unused.png")

    @given(seed=st.integers(0, 10_000))
    def test_round_trip_property(self, tmp_path_factory, seed):
        batch = random_batch(16, n=2, seed=seed)
        path = tmp_path_factory.mktemp("roundtrip") / "batch.png"
        save_image_grid(batch.select([0]), path)
        loaded = load_image_folder(path.parent, 16)
        assert torch.abs(loaded.data[0] - batch.data[0]).max() <= 2.0 / 255.0


class TestLoadImageFolder:
    def _write_pngs(self, directory, n, size=64, start=0):
        rng = np.random.default_rng(start)
        directory.mkdir(parents=True, exist_ok=True)
        for i in range(n):
            arr = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(directory / f"id{i % 2}_{i:04d}.png")

    def test_identity_resize(self, tmp_path):
        self._write_pngs(tmp_path, 8)
        batch = load_image_folder(tmp_path, 64)
        assert batch.data.shape == (8, 3, 64, 64)
        assert batch.role is ImageRole.AUX_HR

    def test_value_endpoints(self, tmp_path):
        arr = np.zeros((64, 64, 3), dtype=np.uint8)
        arr[0, 0] = 255
        Image.fromarray(arr, "RGB").save(tmp_path / "a_0.png")
        batch = load_image_folder(tmp_path, 64)
        assert float(batch.data.max()) == pytest.approx(1.0)
        assert float(batch.data.min()) == pytest.approx(-1.0)

    def test_corrupt_file_is_skipped_with_warning(self, tmp_path):
        self._write_pngs(tmp_path, 3)
        (tmp_path / "id9_bad.png").write_bytes(b"\x89PNG\r\n\x1a\nnot really a png")
        with pytest.warns(UserWarning, match="id9_bad.png"):
            batch = load_image_folder(tmp_path, 64)
        assert len(batch) == 3

    def test_empty_directory_raises(self, tmp_path):
        with pytest.raises(NoDataError):
            load_image_folder(tmp_path, 64)

    def test_all_corrupt_raises(self, tmp_path):
        (tmp_path / "x_0.png").write_bytes(b"junk")
        with pytest.raises(NoDataError), pytest.warns(UserWarning):
            load_image_folder(tmp_path, 64)

    def test_labels_follow_identity_prefix(self, tmp_path):
        self._write_pngs(tmp_path, 4)
        _, labels, names = load_labeled_image_folder(tmp_path, 64)
        assert sorted(set(labels.tolist())) == [0, 1]
        assert names == sorted(names)


class TestUpsampleHelper:
    def test_shape_and_role(self):
        batch = random_batch(16, n=2)
        up = bicubic_upsample(batch, 4)
        assert up.data.shape == (2, 3, 64, 64)
        assert up.role is ImageRole.SUPER_RESOLVED
