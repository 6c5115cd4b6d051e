"""
Unit tests for `core.metrics`.

Covers PSNR arithmetic, its cap and monotonicity, and SSIM against an
independent implementation (`skimage.metrics.structural_similarity`).

Tools:
    - `pytest` with `pytest.mark.parametrize`.
    - `scikit-image` as the SSIM reference.
    - `factory_boy` for `SsimParams` variants.
"""

import numpy as np
import pytest
from skimage.metrics import structural_similarity

from core.exceptions import InvalidInputError
from core.metrics import SsimParams, psnr, ssim
from restoration.factories import SsimParamsFactory


@pytest.fixture
def pair():
    rng = np.random.default_rng(21)
    a = rng.uniform(0.2, 0.8, (40, 48, 1))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    return a, b


class TestPsnr:
    """Tests for `psnr`."""

    def test_identical_images_hit_the_cap(self, pair):
        a, _b = pair

        assert psnr(a, a) == 99.0
        assert psnr(a, a, cap=60.0) == 60.0

    def test_constant_offset(self, pair):
        a, _b = pair

        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)

    def test_matches_direct_formula(self, pair):
        a, b = pair
        mse = np.sum((a - b) ** 2) / a.size

        assert psnr(a, b) == pytest.approx(10 * np.log10(1.0 / mse), abs=1e-9)

    def test_symmetric(self, pair):
        a, b = pair

        assert psnr(a, b) == psnr(b, a)

    def test_peak_scaling(self, pair):
        a, b = pair

        assert psnr(a * 255, b * 255, peak=255) == pytest.approx(psnr(a, b), abs=1e-9)

    def test_decreases_with_noise(self):
        rng = np.random.default_rng(5)
        clean = rng.uniform(0.3, 0.7, (64, 64))

        values = [
            psnr(clean, clean + rng.normal(0, sigma, clean.shape))
            for sigma in (0.01, 0.02, 0.05)
        ]

        assert values[0] > values[1] > values[2]

    @pytest.mark.parametrize("peak", [0.0, -1.0])
    def test_non_positive_peak_rejected(self, pair, peak):
        a, b = pair

        with pytest.raises(InvalidInputError):
            psnr(a, b, peak=peak)

    def test_shape_mismatch_rejected(self, pair):
        a, _b = pair

        with pytest.raises(InvalidInputError):
            psnr(a, a[:-1])


class TestSsim:
    """Tests for `ssim` and `SsimParams`."""

    def test_identical_images_score_one(self, pair):
        a, _b = pair

        assert ssim(a, a) == 1.0

    def test_symmetric(self, pair):
        a, b = pair

        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    def test_inverted_binary_image_is_negative(self):
        rng = np.random.default_rng(2)
        binary = (rng.uniform(size=(32, 32)) > 0.5).astype(float)

        assert ssim(binary, 1.0 - binary) < 0

    def test_color_uses_luminance(self, pair):
        a, b = pair

        assert ssim(np.repeat(a, 3, axis=2), np.repeat(b, 3, axis=2)) == pytest.approx(
            ssim(a, b), abs=1e-12
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_agrees_with_reference_implementation(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.uniform(size=(48, 40))
        b = np.clip(a + rng.normal(0, 0.1 * (seed + 1), a.shape), 0, 1)

        reference = structural_similarity(
            a,
            b,
            gaussian_weights=True,
            sigma=1.5,
            use_sample_covariance=False,
            data_range=1.0,
        )

        assert ssim(a, b, SsimParams()) == pytest.approx(reference, abs=1e-3)

    def test_constants_come_from_params(self, pair):
        a, b = pair
        params = SsimParamsFactory()

        assert -1.0 <= ssim(a, b, params) <= 1.0
        assert ssim(a, a, params) == 1.0

    def test_image_smaller_than_window_rejected(self):
        image = np.zeros((10, 30))

        with pytest.raises(InvalidInputError):
            ssim(image, image)

    @pytest.mark.parametrize("size", [0, 4])
    def test_even_or_empty_window_rejected(self, size):
        with pytest.raises(InvalidInputError):
            SsimParams(window_size=size)

    def test_window_is_normalised(self):
        window = SsimParams().window()

        assert window.shape == (11, 11)
        assert window.sum() == pytest.approx(1.0)
