"""
File-level orchestration behind the management commands.

`RestorationService` reads inputs, calls the library, writes outputs and
records everything in a `RunManifest`. It knows nothing about flags or exit
codes: commands validate parameters first and map the exceptions raised
here to exit codes.

Features:
    - simulate: ground truth -> numbered degraded frames (+ true flows).
    - register: frame directory -> template (+ flows, registered frames).
    - deconvolve: image -> restored image.
    - run: frame directory -> restored image, with outer iterations.
    - compare: PSNR and SSIM of two image files.
    - invert: `.flo` -> inverted `.flo`.

Example:
    >>> RestorationService.run("frames/", "out/", PipelineConfig.from_settings())
    {'restored': PosixPath('out/restored.png'), ...}
"""

import logging
from pathlib import Path
from typing import Optional, Union

import numpy as np
from django.conf import settings

from core.flow import invert_flow, read_flo, write_flo
from core.imgio import load_image, load_sequence, save_image, save_sequence
from core.metrics import SsimParams, psnr, ssim

from .deconv import DeconvConfig, blind_deconv
from .manifest import RunManifest, manifest_path_for, metrics_manifest_path
from .register import PipelineConfig, build_template, iterate_pipeline
from .turbsim import TurbulenceParams, simulate_sequence

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _extension(image_format: Optional[str]) -> str:
    return image_format or settings.TURBULENCE["IMAGE_FORMAT"]


def _flow_paths(directory: Path, count: int) -> list[Path]:
    width = max(4, len(str(count)))
    return [directory / f"flow_{t:0{width}d}.flo" for t in range(1, count + 1)]


class RestorationService:
    """
    Stateless facade over the restoration library.

    Methods:
        simulate(gt_path, out_dir, frame_count, params, ...)
        register(frames_dir, out_dir, cfg, ...)
        deconvolve(input_path, output_path, cfg)
        run(frames_dir, out_dir, cfg, ...)
        compare(first_path, second_path, peak, manifest_path)
        invert(input_path, output_path)

    Every method returns a dict of the paths it wrote (plus results where
    useful); the manifest path is under ``"manifest"``.
    """

    @staticmethod
    def simulate(
        gt_path: PathLike,
        out_dir: PathLike,
        frame_count: int,
        params: TurbulenceParams,
        image_format: Optional[str] = None,
        save_flows: bool = False,
    ) -> dict:
        """
        Render a degraded sequence of the image at `gt_path` into `out_dir`.

        Frames are named ``frame_0001.<ext>``...; true flows, when requested,
        go to ``flows/flow_0001.flo``...
        """

        out_dir = Path(out_dir)
        manifest = RunManifest("simulate")
        manifest.update("", {"gt": gt_path, "out": out_dir, "frames": frame_count})
        manifest.update("sim", params.as_dict())

        with manifest.timing("load"):
            gt = load_image(gt_path)
        with manifest.timing("simulate"):
            frames, flows = simulate_sequence(gt, frame_count, params)
        with manifest.timing("save"):
            paths = save_sequence(frames, out_dir, extension=_extension(image_format))
            if save_flows:
                flow_dir = out_dir / "flows"
                flow_dir.mkdir(parents=True, exist_ok=True)
                for flow, path in zip(flows, _flow_paths(flow_dir, len(flows))):
                    write_flo(flow, path)
                manifest.set("flows", flow_dir)

        manifest.set("gt_name", Path(gt_path).name)
        return {"frames": paths, "manifest": manifest.write(manifest_path_for(out_dir))}

    @staticmethod
    def _save_registration(
        registration, out_dir: Path, extension: str, save_flows: bool, save_registered: bool
    ) -> dict:
        written = {}
        if save_flows:
            flow_dir = out_dir / "flows"
            flow_dir.mkdir(parents=True, exist_ok=True)
            for flow, path in zip(
                registration.per_frame_flows,
                _flow_paths(flow_dir, len(registration.per_frame_flows)),
            ):
                write_flo(flow, path)
            write_flo(registration.mean_flow, flow_dir / "mean.flo")
            write_flo(registration.inverse_mean_flow, flow_dir / "mean_inverse.flo")
            written["flows"] = flow_dir
        if save_registered:
            written["registered"] = save_sequence(
                registration.registered_frames, out_dir / "registered", extension=extension
            )
        return written

    @staticmethod
    def _describe_pipeline(manifest: RunManifest, cfg: PipelineConfig) -> None:
        manifest.update(
            "pipeline",
            {
                "keyframe_index": cfg.keyframe_index,
                "outer_iterations": cfg.outer_iterations,
                "flow_scale": cfg.flow_scale,
                "low_memory": cfg.low_memory,
                "threads": cfg.threads,
            },
        )
        manifest.update("flow", cfg.flow_params.as_dict())

    @staticmethod
    def register(
        frames_dir: PathLike,
        out_dir: PathLike,
        cfg: PipelineConfig,
        image_format: Optional[str] = None,
        save_flows: bool = False,
        save_registered: bool = False,
    ) -> dict:
        """Build the template of a frame directory and write ``template.<ext>``."""

        out_dir = Path(out_dir)
        extension = _extension(image_format)
        manifest = RunManifest("register")
        manifest.update("", {"frames_dir": frames_dir, "out": out_dir})
        RestorationService._describe_pipeline(manifest, cfg)

        with manifest.timing("load"):
            frames, _paths = load_sequence(frames_dir)
        manifest.set("frame_count", len(frames))
        with manifest.timing("register"):
            registration = build_template(frames, cfg)

        with manifest.timing("save"):
            out_dir.mkdir(parents=True, exist_ok=True)
            template_path = out_dir / f"template.{extension}"
            save_image(registration.template, template_path)
            written = RestorationService._save_registration(
                registration, out_dir, extension, save_flows, save_registered
            )
        manifest.set("template", template_path)
        for key in written:
            manifest.set(key, out_dir / key)

        return {
            "template": template_path,
            "registration": registration,
            "manifest": manifest.write(manifest_path_for(out_dir)),
            **written,
        }

    @staticmethod
    def deconvolve(input_path: PathLike, output_path: PathLike, cfg: DeconvConfig) -> dict:
        """Blind-deconvolve one image file into `output_path`."""

        manifest = RunManifest("deconv")
        manifest.update("", {"input": input_path, "output": output_path})
        manifest.update("deconv", cfg.as_dict())

        with manifest.timing("load"):
            template = load_image(input_path)
        with manifest.timing("deconv"):
            result = blind_deconv(template, cfg)
        with manifest.timing("save"):
            save_image(result.restored, output_path)

        manifest.update(
            "result",
            {"sigma": result.sigma, "iterations": result.iterations, "stalled": result.stalled},
        )
        return {
            "restored": Path(output_path),
            "result": result,
            "manifest": manifest.write(manifest_path_for(output_path)),
        }

    @staticmethod
    def run(
        frames_dir: PathLike,
        out_dir: PathLike,
        cfg: PipelineConfig,
        image_format: Optional[str] = None,
        save_flows: bool = False,
        save_registered: bool = False,
    ) -> dict:
        """
        Full pipeline on a frame directory.

        Writes ``restored.<ext>`` and the last round's ``template.<ext>``;
        per-stage timings are recorded per round (``timing.round<i>.<stage>``)
        and summed (``timing.<stage>``).
        """

        out_dir = Path(out_dir)
        extension = _extension(image_format)
        manifest = RunManifest("run")
        manifest.update("", {"frames_dir": frames_dir, "out": out_dir})
        RestorationService._describe_pipeline(manifest, cfg)
        manifest.update("deconv", cfg.deconv.as_dict())

        with manifest.timing("load"):
            frames, _paths = load_sequence(frames_dir)
        manifest.set("frame_count", len(frames))

        totals = {}
        last = None
        for last in iterate_pipeline(frames, cfg):
            for stage, seconds in last.timings.items():
                manifest.set(f"timing.round{last.iteration}.{stage}", round(seconds, 6))
                totals[stage] = totals.get(stage, 0.0) + seconds
            manifest.set(f"result.round{last.iteration}.sigma", last.deconvolution.sigma)
        for stage, seconds in totals.items():
            manifest.set(f"timing.{stage}", round(seconds, 6))

        with manifest.timing("save"):
            out_dir.mkdir(parents=True, exist_ok=True)
            restored_path = out_dir / f"restored.{extension}"
            template_path = out_dir / f"template.{extension}"
            save_image(last.restored, restored_path)
            save_image(last.registration.template, template_path)
            written = RestorationService._save_registration(
                last.registration, out_dir, extension, save_flows, save_registered
            )

        manifest.update("", {"restored": restored_path, "template": template_path})
        manifest.update(
            "result",
            {"sigma": last.deconvolution.sigma, "stalled": last.deconvolution.stalled},
        )
        for key in written:
            manifest.set(key, out_dir / key)
        return {
            "restored": restored_path,
            "template": template_path,
            "rounds": last.iteration,
            "manifest": manifest.write(manifest_path_for(out_dir)),
            **written,
        }

    @staticmethod
    def compare(
        first_path: PathLike,
        second_path: PathLike,
        peak: float = 1.0,
        manifest_path: Optional[PathLike] = None,
    ) -> dict:
        """
        PSNR and SSIM between two image files.

        Intensities are read in ``[0, 1]`` and rescaled to ``[0, peak]`` for
        PSNR, so ``peak=255`` reports the usual 8-bit figure. The manifest
        goes to `manifest_path`, by default
        ``<second>.metrics.manifest.txt`` next to the scored image.
        """

        manifest = RunManifest("metrics")
        manifest.update("", {"first": first_path, "second": second_path, "peak": peak})

        with manifest.timing("load"):
            first = load_image(first_path)
            second = load_image(second_path)
        with manifest.timing("metrics"):
            scores = {
                "psnr": psnr(first * peak, second * peak, peak=peak),
                "ssim": ssim(first, second, SsimParams.from_settings()),
            }

        manifest.update("result", scores)
        if manifest_path is None:
            manifest_path = metrics_manifest_path(second_path)
        return {**scores, "manifest": manifest.write(manifest_path)}

    @staticmethod
    def invert(input_path: PathLike, output_path: PathLike) -> dict:
        """Invert the flow stored in `input_path` and write it to `output_path`."""

        manifest = RunManifest("invert_flow")
        manifest.update("", {"input": input_path, "output": output_path})

        with manifest.timing("load"):
            flow = read_flo(input_path)
        with manifest.timing("invert"):
            inverse = invert_flow(flow)
        with manifest.timing("save"):
            write_flo(inverse, output_path)

        manifest.set("shape", flow.shape[:2])
        manifest.set("max_displacement", float(np.abs(flow).max()) if flow.size else 0.0)
        return {
            "output": Path(output_path),
            "manifest": manifest.write(manifest_path_for(output_path)),
        }
