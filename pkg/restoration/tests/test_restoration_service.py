"""
Tests for `RestorationService`, the file-level layer behind the commands.

Each service method is exercised end to end on tiny synthetic inputs under
`tmp_path`; the assertions check the files written, the manifest entries and
the values handed back to the caller.

Tools:
    - `pytest` fixtures for ground truth and frame directories.
    - `factory_boy` for small, fast parameter sets.
    - `pytest-mock` to observe library calls.
"""

import numpy as np
import pytest

from core.constants import SceneKind
from core.exceptions import InvalidInputError
from core.flow import read_flo, write_flo
from core.imgio import load_image, load_sequence, save_image
from restoration.factories import (
    DeconvConfigFactory,
    PipelineConfigFactory,
    TurbulenceParamsFactory,
)
from restoration.manifest import read_key_values
from restoration.services import RestorationService
from restoration.turbsim import random_smooth_flow, synthetic_scene


@pytest.fixture
def gt_path(tmp_path):
    path = tmp_path / "gt.png"
    save_image(synthetic_scene(40, 40, SceneKind.SCENE, seed=1), path)
    return path


@pytest.fixture
def frames_dir(tmp_path, gt_path):
    out = tmp_path / "frames"
    RestorationService.simulate(
        gt_path, out, 3, TurbulenceParamsFactory(amplitude=1.0, correlation_length=8.0)
    )
    return out


@pytest.fixture
def quick_cfg():
    return PipelineConfigFactory(deconv=DeconvConfigFactory(max_iterations=10))


class TestSimulate:
    """Tests for `RestorationService.simulate`."""

    def test_writes_frames_and_manifest(self, tmp_path, gt_path):
        out = tmp_path / "sim"

        written = RestorationService.simulate(gt_path, out, 4, TurbulenceParamsFactory(seed=12))

        assert [p.name for p in written["frames"]] == [
            f"frame_{t:04d}.png" for t in range(1, 5)
        ]
        manifest = read_key_values(written["manifest"])
        assert written["manifest"] == out / "manifest.txt"
        assert manifest["command"] == "simulate"
        assert manifest["gt_name"] == "gt.png"
        assert manifest["frames"] == "4"
        assert manifest["sim.seed"] == "12"
        assert "timing.simulate" in manifest

    def test_optional_flows_and_format(self, tmp_path, gt_path):
        out = tmp_path / "sim"
        params = TurbulenceParamsFactory(seed=5, correlation_length=6.0)

        RestorationService.simulate(
            gt_path, out, 2, params, image_format="pgm", save_flows=True
        )

        frames, paths = load_sequence(out)
        assert [p.suffix for p in paths] == [".pgm", ".pgm"]
        flow = read_flo(out / "flows" / "flow_0002.flo")
        expected = random_smooth_flow(6, 40, 40, params.amplitude, 6.0)
        np.testing.assert_allclose(flow, expected, atol=1e-5)
        assert frames[0].shape == (40, 40, 1)


class TestRegisterAndRun:
    """Tests for `RestorationService.register` and `RestorationService.run`."""

    def test_register_writes_template(self, tmp_path, frames_dir, quick_cfg):
        out = tmp_path / "reg"

        written = RestorationService.register(frames_dir, out, quick_cfg)

        assert written["template"] == out / "template.png"
        assert load_image(written["template"]).shape == (40, 40, 1)
        manifest = read_key_values(out / "manifest.txt")
        assert manifest["frame_count"] == "3"
        assert manifest["flow.pyramid_levels"] == "3"
        assert "flows" not in manifest

    def test_register_artifacts(self, tmp_path, frames_dir, quick_cfg):
        out = tmp_path / "reg"

        written = RestorationService.register(
            frames_dir, out, quick_cfg, save_flows=True, save_registered=True
        )

        flow_names = sorted(p.name for p in (out / "flows").iterdir())
        assert flow_names == [
            "flow_0001.flo",
            "flow_0002.flo",
            "flow_0003.flo",
            "mean.flo",
            "mean_inverse.flo",
        ]
        assert len(written["registered"]) == 3
        np.testing.assert_allclose(
            read_flo(out / "flows" / "mean.flo"),
            written["registration"].mean_flow,
            atol=1e-5,
        )

    def test_run_writes_images_and_round_timings(self, tmp_path, frames_dir, quick_cfg):
        out = tmp_path / "run"
        cfg = PipelineConfigFactory(
            outer_iterations=2, deconv=DeconvConfigFactory(max_iterations=10)
        )

        written = RestorationService.run(frames_dir, out, cfg, image_format="pgm")

        assert written["restored"] == out / "restored.pgm"
        assert written["template"] == out / "template.pgm"
        assert written["rounds"] == 2
        manifest = read_key_values(written["manifest"])
        for key in (
            "timing.round1.register",
            "timing.round2.deconv",
            "timing.register",
            "timing.deconv",
            "result.round1.sigma",
            "result.sigma",
            "deconv.max_iterations",
        ):
            assert key in manifest
        assert manifest["pipeline.outer_iterations"] == "2"

    def test_empty_frame_directory(self, tmp_path, quick_cfg):
        (tmp_path / "empty").mkdir()

        with pytest.raises(InvalidInputError):
            RestorationService.run(tmp_path / "empty", tmp_path / "out", quick_cfg)


class TestDeconvolve:
    """Tests for `RestorationService.deconvolve`."""

    def test_writes_restored_image_and_sidecar_manifest(self, tmp_path, gt_path):
        output = tmp_path / "restored.png"

        written = RestorationService.deconvolve(
            gt_path, output, DeconvConfigFactory(max_iterations=15, sigma_init=1.4)
        )

        assert output.exists()
        manifest = read_key_values(tmp_path / "restored.png.manifest.txt")
        assert manifest["deconv.sigma_init"] == "1.4"
        assert float(manifest["result.sigma"]) == pytest.approx(written["result"].sigma)

    def test_missing_input(self, tmp_path):
        with pytest.raises(OSError):
            RestorationService.deconvolve(
                tmp_path / "absent.png", tmp_path / "out.png", DeconvConfigFactory()
            )


class TestCompareAndInvert:
    """Tests for `RestorationService.compare` and `RestorationService.invert`."""

    def test_identical_files(self, gt_path):
        scores = RestorationService.compare(gt_path, gt_path)

        assert scores["psnr"] == 99.0
        assert scores["ssim"] == 1.0

    def test_compare_writes_manifest(self, tmp_path, gt_path):
        other = tmp_path / "other.png"
        save_image(load_image(gt_path) * 0.9, other)

        scores = RestorationService.compare(gt_path, other, peak=255)

        assert scores["manifest"] == tmp_path / "other.png.metrics.manifest.txt"
        manifest = read_key_values(scores["manifest"])
        assert manifest["command"] == "metrics"
        assert manifest["first"] == str(gt_path)
        assert manifest["peak"] == "255"
        assert float(manifest["result.psnr"]) == pytest.approx(scores["psnr"])
        assert "timing.metrics" in manifest

    def test_peak_does_not_change_ratio(self, tmp_path, gt_path):
        other = tmp_path / "other.png"
        save_image(load_image(gt_path) * 0.9, other)

        unit = RestorationService.compare(gt_path, other)
        eight_bit = RestorationService.compare(gt_path, other, peak=255)

        assert eight_bit["psnr"] == pytest.approx(unit["psnr"], abs=1e-9)

    def test_invert_writes_flow(self, tmp_path):
        source = tmp_path / "w.flo"
        write_flo(random_smooth_flow(2, 24, 20, 1.0, 6.0), source)

        written = RestorationService.invert(source, tmp_path / "w_inv.flo")

        assert read_flo(written["output"]).shape == (24, 20, 2)
        manifest = read_key_values(tmp_path / "w_inv.flo.manifest.txt")
        assert manifest["command"] == "invert_flow"
        assert manifest["shape"] == "24,20"
