"""
Unit tests for template registration and the pipeline driver.

The tests cover:
    - Degenerate sequences (one frame, identical frames).
    - The template identity: mean of frames warped by
      ``compose_flow(invert_flow(mean_flow(W)), W[t])``.
    - Keyframe handling, low-memory mode, thread-count independence and
      reduced-resolution flow.
    - `iterate_pipeline` / `run_pipeline` on small synthetic sequences.

Tools:
    - `pytest` with `pytest.mark.parametrize`.
    - `pytest-mock` (`mocker.spy`) to count flow solves.
    - `factory_boy` for `PipelineConfig`, `TurbulenceParams`.
"""

import numpy as np
import pytest

import restoration.register as register_module
from core.constants import SceneKind
from core.exceptions import InvalidInputError
from core.flow import compose_flow, invert_flow, mean_flow
from core.imgio import warp_image
from core.metrics import psnr
from core.utils import running_mean
from restoration.factories import PipelineConfigFactory, TurbulenceParamsFactory
from restoration.register import (
    PipelineConfig,
    build_template,
    iterate_pipeline,
    run_pipeline,
    temporal_mean,
    validate_frames,
)
from restoration.turbsim import simulate_sequence, synthetic_scene


@pytest.fixture
def scene():
    return synthetic_scene(48, 48, SceneKind.SCENE, seed=2)


@pytest.fixture
def turbulent(scene):
    """Five warped, lightly blurred and noisy frames of `scene`."""

    params = TurbulenceParamsFactory(
        amplitude=1.0, correlation_length=8.0, blur_sigma_mean=0.5, noise_sigma=0.005
    )
    frames, _flows = simulate_sequence(scene, 5, params)
    return frames


class TestPipelineConfig:
    """Tests for `PipelineConfig` validation."""

    @pytest.mark.parametrize(
        "field, value",
        [
            ("keyframe_index", -1),
            ("outer_iterations", 0),
            ("flow_scale", 0.0),
            ("flow_scale", 1.5),
            ("threads", 0),
        ],
    )
    def test_invalid_values_rejected(self, field, value):
        with pytest.raises(InvalidInputError):
            PipelineConfig(**{field: value})

    def test_from_settings_merges_overrides(self, settings):
        settings.TURBULENCE = {**settings.TURBULENCE, "OUTER_ITERATIONS": 2}

        cfg = PipelineConfig.from_settings(keyframe_index=3, threads=None)

        assert cfg.outer_iterations == 2
        assert cfg.keyframe_index == 3
        assert cfg.threads == settings.TURBULENCE["THREADS"]


class TestValidateFrames:
    """Tests for `validate_frames` and `temporal_mean`."""

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            validate_frames([])

    def test_mixed_sizes_rejected(self, scene):
        with pytest.raises(InvalidInputError):
            validate_frames([scene, scene[:-1]])

    def test_temporal_mean(self, scene):
        np.testing.assert_allclose(temporal_mean([scene, 0.5 * scene]), 0.75 * scene)


class TestBuildTemplate:
    """Tests for `build_template`."""

    def test_single_frame_is_its_own_template(self, scene):
        result = build_template([scene], PipelineConfigFactory())

        np.testing.assert_array_equal(result.template, scene)
        np.testing.assert_array_equal(result.mean_flow, 0.0)

    def test_identical_frames(self, scene):
        result = build_template([scene] * 4, PipelineConfigFactory())

        assert np.sqrt(np.mean((result.template - scene) ** 2)) < 1e-3

    def test_result_layout(self, turbulent):
        result = build_template(turbulent, PipelineConfigFactory())

        assert len(result.per_frame_flows) == len(result.registered_frames) == 5
        np.testing.assert_array_equal(result.per_frame_flows[0], 0.0)
        np.testing.assert_allclose(
            result.template, running_mean(result.registered_frames), atol=1e-15
        )

    def test_template_identity(self, turbulent):
        result = build_template(turbulent, PipelineConfigFactory(keyframe_index=2))
        flows = result.per_frame_flows

        inverse = invert_flow(mean_flow(flows))
        expected = np.mean(
            [warp_image(frame, compose_flow(inverse, flow)) for frame, flow in zip(turbulent, flows)],
            axis=0,
        )

        np.testing.assert_allclose(result.template, expected, atol=1e-12)
        np.testing.assert_allclose(result.inverse_mean_flow, inverse, atol=1e-12)

    def test_keyframe_flow_not_estimated(self, mocker, turbulent):
        spy = mocker.spy(register_module, "horn_schunck")

        build_template(turbulent, PipelineConfigFactory(keyframe_index=1))

        assert spy.call_count == len(turbulent) - 1

    def test_reference_replaces_keyframe(self, mocker, scene, turbulent):
        spy = mocker.spy(register_module, "horn_schunck")

        build_template(turbulent, PipelineConfigFactory(), reference=scene)

        assert spy.call_count == len(turbulent)

    def test_keyframe_out_of_range(self, turbulent):
        with pytest.raises(InvalidInputError):
            build_template(turbulent, PipelineConfigFactory(keyframe_index=5))

    def test_low_memory_matches_default(self, turbulent):
        full = build_template(turbulent, PipelineConfigFactory())
        lean = build_template(turbulent, PipelineConfigFactory(low_memory=True))

        np.testing.assert_allclose(lean.template, full.template, atol=1e-12)
        assert lean.per_frame_flows == []
        assert lean.registered_frames == []

    def test_thread_count_does_not_change_result(self, turbulent):
        single = build_template(turbulent, PipelineConfigFactory(threads=1))
        pooled = build_template(turbulent, PipelineConfigFactory(threads=3))

        np.testing.assert_allclose(pooled.template, single.template, atol=1e-6)

    def test_reduced_flow_scale_keeps_grid(self, turbulent):
        result = build_template(turbulent, PipelineConfigFactory(flow_scale=0.5))

        assert result.mean_flow.shape == (48, 48, 2)
        assert result.template.shape == turbulent[0].shape

    def test_color_frames_registered_per_channel(self, turbulent):
        color = [np.repeat(frame, 3, axis=2) for frame in turbulent]

        gray = build_template(turbulent, PipelineConfigFactory())
        rgb = build_template(color, PipelineConfigFactory())

        for channel in range(3):
            np.testing.assert_allclose(rgb.template[:, :, channel], gray.template[:, :, 0], atol=1e-9)

    def test_template_sharper_than_temporal_mean(self):
        gt = synthetic_scene(96, 96, SceneKind.SCENE, seed=6)
        params = TurbulenceParamsFactory(amplitude=2.0, blur_sigma_mean=0.5, noise_sigma=0.01)
        frames, _flows = simulate_sequence(gt, 16, params)

        result = build_template(frames, PipelineConfigFactory())

        assert psnr(result.template, gt) > psnr(temporal_mean(frames), gt)


class TestPipeline:
    """Tests for `iterate_pipeline` and `run_pipeline`."""

    def test_sharp_still_sequence_survives(self):
        blocks = synthetic_scene(48, 48, SceneKind.BLOCKS, seed=2)

        restored = run_pipeline([blocks] * 3, PipelineConfigFactory())

        assert psnr(restored, blocks) >= 40.0

    def test_rounds_and_timings(self, turbulent):
        rounds = list(iterate_pipeline(turbulent, PipelineConfigFactory(outer_iterations=2)))

        assert [r.iteration for r in rounds] == [1, 2]
        for r in rounds:
            assert set(r.timings) == {"register", "deconv"}
            assert r.restored.shape == turbulent[0].shape

    def test_later_rounds_register_against_restored_image(self, mocker, turbulent):
        build = mocker.spy(register_module, "build_template")

        list(iterate_pipeline(turbulent, PipelineConfigFactory(outer_iterations=2)))

        assert build.call_args_list[0].kwargs["reference"] is None
        assert build.call_args_list[1].kwargs["reference"] is not None

    def test_run_returns_last_round(self, turbulent):
        cfg = PipelineConfigFactory()

        restored = run_pipeline(turbulent, cfg)
        expected = list(iterate_pipeline(turbulent, cfg))[-1].restored

        np.testing.assert_array_equal(restored, expected)
