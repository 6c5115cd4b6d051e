"""
Acceptance checks on full-size synthetic data.

These tests run the library at the resolutions and sequence lengths the
restoration is meant for (256 x 256, up to 50 frames) and take minutes, so
they carry the ``slow`` marker and are skipped by default::

    pytest -m slow

Tools:
    - `pytest` with module-scoped fixtures so that the expensive simulated
      sequences are rendered once.
    - `factory_boy` for the wavefront parameters.
"""

import time

import numpy as np
import pytest
from django.core.management import call_command

from core.constants import SceneKind
from core.flow import compose_flow, flow_magnitude_rms, invert_flow, mean_flow
from core.imgio import load_image, save_image
from core.metrics import psnr, ssim
from restoration.deconv import DeconvConfig, blind_deconv, convolve, make_kernel
from restoration.factories import WavefrontParamsFactory
from restoration.register import PipelineConfig, build_template, iterate_pipeline, temporal_mean
from restoration.turbsim import (
    TurbulenceParams,
    average_psf,
    fit_gaussian_psf,
    random_smooth_flow,
    simulate_sequence,
    synthetic_scene,
    wavefront_psf,
)

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def ground_truth():
    return synthetic_scene(256, 256, SceneKind.SCENE, seed=11)


@pytest.fixture(scope="module")
def sequence(ground_truth):
    params = TurbulenceParams(
        amplitude=2.0, correlation_length=10.0, blur_sigma_mean=1.0, noise_sigma=0.01, seed=21
    )
    frames, _flows = simulate_sequence(ground_truth, 50, params)
    return frames


@pytest.fixture(scope="module")
def blocks():
    return synthetic_scene(256, 256, SceneKind.BLOCKS, seed=11)


@pytest.fixture(scope="module")
def blocks_sequence(blocks):
    params = TurbulenceParams(
        amplitude=2.0, correlation_length=10.0, blur_sigma_mean=1.0, noise_sigma=0.01, seed=31
    )
    frames, _flows = simulate_sequence(blocks, 20, params)
    return frames


@pytest.fixture(scope="module")
def default_cfg():
    return PipelineConfig()


class TestFlowAlgebra:
    """Inversion round trip and averaging of independent warps."""

    @pytest.mark.parametrize("seed", range(10))
    def test_inversion_round_trip(self, seed):
        flow = random_smooth_flow(seed, 256, 256, 1.0, 10.0)
        flow *= 2.5 / np.max(np.hypot(flow[:, :, 0], flow[:, :, 1]))

        started = time.perf_counter()
        inverse = invert_flow(flow)
        elapsed = time.perf_counter() - started

        assert flow_magnitude_rms(compose_flow(flow, inverse), margin=10) < 0.15
        assert elapsed < 1.0

    def test_inversion_median_time(self):
        flow = random_smooth_flow(3, 256, 256, 1.0, 6.0)
        flow *= 2.5 / np.max(np.hypot(flow[:, :, 0], flow[:, :, 1]))
        invert_flow(flow)

        timings = []
        for _run in range(9):
            started = time.perf_counter()
            invert_flow(flow)
            timings.append(time.perf_counter() - started)

        assert np.median(timings) < 0.02

    @pytest.mark.parametrize("count", [25, 100, 400])
    def test_mean_of_independent_warps_decays(self, count):
        amplitude = 2.0
        rms = [
            flow_magnitude_rms(
                mean_flow(
                    random_smooth_flow(1000 * seed + t, 64, 64, amplitude, 10.0)
                    for t in range(count)
                )
            )
            for seed in range(10)
        ]

        assert np.mean(rms) <= 1.75 * amplitude / np.sqrt(count)


class TestTemplate:
    """Registration quality on a 50-frame turbulent sequence."""

    def test_template_beats_temporal_mean(self, ground_truth, sequence, default_cfg):
        started = time.perf_counter()
        template = build_template(sequence, default_cfg).template
        elapsed = time.perf_counter() - started

        gain = psnr(template, ground_truth) - psnr(temporal_mean(sequence), ground_truth)
        assert gain >= 1.0
        assert elapsed < 60.0

    def test_more_frames_do_not_hurt(self, ground_truth, sequence, default_cfg):
        scores = [
            psnr(build_template(sequence[:count], default_cfg).template, ground_truth)
            for count in (5, 20, 50)
        ]

        assert scores[1] >= scores[0] - 0.2
        assert scores[2] >= scores[1] - 0.2

    def test_keyframe_choice_is_not_critical(self, ground_truth, sequence):
        scores = [
            ssim(build_template(sequence, PipelineConfig(keyframe_index=k)).template, ground_truth)
            for k in (0, 25, 49)
        ]

        assert max(scores) - min(scores) < 0.01


class TestRestoration:
    """Deblurring of templates and the full pipeline."""

    def test_blind_deconvolution_recovers_blur(self):
        gt = synthetic_scene(128, 128, SceneKind.BLOCKS, seed=5)
        template = convolve(gt, make_kernel(1.5))

        result = blind_deconv(template, DeconvConfig())

        assert 1.2 <= result.sigma <= 1.8
        assert psnr(result.restored, gt) >= psnr(template, gt) + 0.5

    def test_pipeline_sharpens_template(self, blocks, blocks_sequence, default_cfg):
        rounds = list(iterate_pipeline(blocks_sequence, default_cfg))

        restored = rounds[-1].restored
        template = rounds[-1].registration.template
        assert psnr(restored, blocks) >= psnr(template, blocks) + 0.5

    def test_second_outer_iteration_is_not_worse(self, blocks, blocks_sequence):
        cfg = PipelineConfig(outer_iterations=2)

        rounds = list(iterate_pipeline(blocks_sequence, cfg))

        first = psnr(rounds[0].restored, blocks)
        second = psnr(rounds[1].restored, blocks)
        assert second >= first - 0.2


class TestPsfModel:
    """The average of many instantaneous PSFs is close to a Gaussian."""

    def test_average_versus_single_draw(self):
        params = WavefrontParamsFactory(grid_size=128)

        averaged = fit_gaussian_psf(average_psf(params, draws=40, seed=3))
        single = fit_gaussian_psf(
            wavefront_psf(
                WavefrontParamsFactory(grid_size=128, higher_order_sigma=2.0),
                np.random.default_rng(3),
            )
        )

        assert averaged.scaled_residual < 0.15
        assert single.scaled_residual >= 2 * averaged.scaled_residual


class TestDeterminism:
    """Command outputs do not depend on the worker count."""

    def test_run_with_one_and_four_threads(self, tmp_path, ground_truth):
        gt_path = tmp_path / "gt.png"
        save_image(ground_truth[:96, :96], gt_path)
        frames = tmp_path / "frames"
        call_command("simulate", gt=str(gt_path), frames=8, out=str(frames), seed=4, verbosity=0)

        for threads in (1, 4):
            call_command(
                "run",
                frames=str(frames),
                out=str(tmp_path / f"run{threads}"),
                threads=threads,
                iterations=30,
                verbosity=0,
            )

        np.testing.assert_allclose(
            load_image(tmp_path / "run1" / "restored.png"),
            load_image(tmp_path / "run4" / "restored.png"),
            atol=1e-6,
        )
