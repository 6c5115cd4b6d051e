"""
Template registration and the full restoration pipeline.

Every frame is registered to the latent undistorted geometry without ever
seeing it. With ``w_kt`` the flow from the keyframe to frame ``t``, the
average ``w_bar = mean_t w_kt`` approximates the keyframe's own distortion
(turbulence warps are zero-mean), so

    w_hat_t = compose_flow(invert_flow(w_bar), w_kt)
    template = mean_t warp_image(frame_t, w_hat_t)

pulls every frame onto the undistorted grid. The template is then deblurred
by `blind_deconv`, optionally repeating the whole procedure with the restored
image as the reference.

Flow estimation runs in a thread pool of `threads` workers; results are
consumed in frame order and averaged with `core.utils.RunningMean`, so the
output does not depend on the worker count.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from django.conf import settings
from django.utils.translation import gettext_lazy as _

from core.exceptions import InvalidInputError
from core.flow import (
    HornSchunckParams,
    compose_flow,
    horn_schunck,
    invert_flow,
    mean_flow,
    resize_flow,
    zero_flow,
)
from core.imgio import as_image, resize_image, to_gray, warp_image
from core.utils import RunningMean, running_mean

from .deconv import DeconvConfig, DeconvResult, blind_deconv

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    """
    Settings of `build_template` and `run_pipeline`.

    Attributes:
        keyframe_index (int): frame used as the registration anchor.
        flow_params (HornSchunckParams): optical flow settings.
        deconv (DeconvConfig): blind deconvolution settings.
        outer_iterations (int): pipeline repetitions, each one using the
            previous restored image as reference.
        flow_scale (float): flows are estimated on frames resized by this
            factor and upsampled back.
        low_memory (bool): recompute flows in a second pass instead of
            keeping ``T`` fields in memory.
        threads (int): flow workers.
    """

    keyframe_index: int = 0
    flow_params: HornSchunckParams = field(default_factory=HornSchunckParams)
    deconv: DeconvConfig = field(default_factory=DeconvConfig)
    outer_iterations: int = 1
    flow_scale: float = 1.0
    low_memory: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.keyframe_index < 0:
            raise InvalidInputError(_("keyframe_index must not be negative."))
        if self.outer_iterations < 1:
            raise InvalidInputError(_("outer_iterations must be at least 1."))
        if not 0 < self.flow_scale <= 1:
            raise InvalidInputError(_("flow_scale must lie in (0, 1]."))
        if self.threads < 1:
            raise InvalidInputError(_("threads must be at least 1."))

    @classmethod
    def from_settings(cls, flow_params=None, deconv=None, **overrides):
        conf = settings.TURBULENCE
        values = {
            "keyframe_index": conf["KEYFRAME_INDEX"],
            "outer_iterations": conf["OUTER_ITERATIONS"],
            "flow_scale": conf["FLOW_SCALE"],
            "low_memory": conf["LOW_MEMORY"],
            "threads": conf["THREADS"],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(
            flow_params=flow_params or HornSchunckParams.from_settings(),
            deconv=deconv or DeconvConfig.from_settings(),
            **values,
        )


@dataclass
class RegistrationResult:
    """
    Outcome of `build_template`.

    In low-memory mode `per_frame_flows` and `registered_frames` are empty.
    """

    template: object
    per_frame_flows: list
    mean_flow: object
    inverse_mean_flow: object
    registered_frames: list


@dataclass
class PipelineRound:
    """One outer iteration of `iterate_pipeline` with its stage timings."""

    iteration: int
    registration: RegistrationResult
    deconvolution: DeconvResult
    timings: dict = field(default_factory=dict)

    @property
    def restored(self):
        return self.deconvolution.restored


def validate_frames(frames):
    """
    Check that `frames` is a non-empty list of equally sized images.

    Raises:
        InvalidInputError: empty list, bad image or mixed sizes.
    """

    frames = [as_image(f) for f in frames]
    if not frames:
        raise InvalidInputError(_("At least one frame is required."))
    shape = frames[0].shape
    for index, frame in enumerate(frames):
        if frame.shape != shape:
            raise InvalidInputError(
                _("Frame %(i)d has shape %(s)s, expected %(e)s.")
                % {"i": index, "s": frame.shape, "e": shape}
            )
    return frames


def temporal_mean(frames):
    """Plain pixelwise average of the frames, in frame order."""

    return running_mean(validate_frames(frames))


def estimate_flow(reference, frame, params, flow_scale=1.0):
    """
    Horn-Schunck flow from `reference` to `frame` on their luminance.

    With ``flow_scale < 1`` both images are shrunk first and the resulting
    field is resampled back to full resolution.
    """

    reference = to_gray(reference)
    frame = to_gray(frame)
    if flow_scale >= 1.0:
        return horn_schunck(reference, frame, params)

    height, width = reference.shape[:2]
    shape = (max(8, round(height * flow_scale)), max(8, round(width * flow_scale)))
    small = horn_schunck(
        resize_image(reference, shape), resize_image(frame, shape), params
    )
    return resize_flow(small, (height, width))


def _ordered_map(function, items, threads):
    """Yield ``function(item)`` in item order, at most `threads` at a time."""

    items = list(items)
    if threads <= 1:
        for item in items:
            yield function(item)
        return

    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(items), threads):
            yield from pool.map(function, items[start : start + threads])


def build_template(frames, cfg=None, reference=None, threads=None):
    """
    Register every frame to the undistorted geometry and average them.

    Args:
        frames (list[np.ndarray]): ``T >= 1`` equally sized images.
        cfg (PipelineConfig, optional): defaults from settings.
        reference (np.ndarray, optional): image playing the keyframe's role;
            when given, the flow of every frame (the keyframe included) is
            estimated against it.
        threads (int, optional): overrides `cfg.threads`.

    Raises:
        InvalidInputError: no frames, mixed sizes or keyframe out of range.

    Returns:
        RegistrationResult
    """

    cfg = cfg or PipelineConfig.from_settings()
    frames = validate_frames(frames)
    threads = threads or cfg.threads
    count = len(frames)
    key = cfg.keyframe_index
    if key >= count:
        raise InvalidInputError(
            _("Keyframe index %(k)d is out of range for %(n)d frames.")
            % {"k": key, "n": count}
        )

    if reference is None:
        anchor = to_gray(frames[key])
    else:
        reference = as_image(reference)
        if reference.shape[:2] != frames[0].shape[:2]:
            raise InvalidInputError(_("Reference and frames differ in size."))
        anchor = to_gray(reference)

    def flow_for(t):
        if reference is None and t == key:
            return zero_flow(frames[t].shape)
        return estimate_flow(anchor, frames[t], cfg.flow_params, cfg.flow_scale)

    started = time.perf_counter()
    if cfg.low_memory:
        accumulator = RunningMean()
        for flow in _ordered_map(flow_for, range(count), threads):
            accumulator.add(flow)
        w_bar = accumulator.value()
        flows = []
    else:
        flows = list(_ordered_map(flow_for, range(count), threads))
        w_bar = mean_flow(flows)
    w_bar_inv = invert_flow(w_bar)
    logger.info(
        "Estimated %d flows against frame %s in %.2fs",
        count,
        "reference" if reference is not None else key,
        time.perf_counter() - started,
    )

    def register_frame(t):
        flow = flows[t] if flows else flow_for(t)
        return warp_image(frames[t], compose_flow(w_bar_inv, flow))

    template = RunningMean()
    registered = []
    for image in _ordered_map(register_frame, range(count), threads):
        template.add(image)
        if not cfg.low_memory:
            registered.append(image)

    return RegistrationResult(
        template=template.value(),
        per_frame_flows=flows,
        mean_flow=w_bar,
        inverse_mean_flow=w_bar_inv,
        registered_frames=registered,
    )


def iterate_pipeline(frames, cfg=None, threads=None):
    """
    Yield one `PipelineRound` per outer iteration.

    Round 1 registers against the keyframe; every later round registers
    against the previous round's restored image.
    """

    cfg = cfg or PipelineConfig.from_settings()
    frames = validate_frames(frames)
    reference = None
    for iteration in range(1, cfg.outer_iterations + 1):
        started = time.perf_counter()
        registration = build_template(frames, cfg, reference=reference, threads=threads)
        registered_at = time.perf_counter()
        deconvolution = blind_deconv(registration.template, cfg.deconv)
        finished = time.perf_counter()

        yield PipelineRound(
            iteration=iteration,
            registration=registration,
            deconvolution=deconvolution,
            timings={
                "register": registered_at - started,
                "deconv": finished - registered_at,
            },
        )
        reference = deconvolution.restored


def run_pipeline(frames, cfg=None, threads=None):
    """
    Restore a turbulent sequence: template registration, then blind
    deconvolution, repeated `cfg.outer_iterations` times.

    Returns:
        np.ndarray: the restored image.
    """

    last = None
    for last in iterate_pipeline(frames, cfg, threads):
        logger.info(
            "Pipeline round %d done (sigma %.3f)", last.iteration, last.deconvolution.sigma
        )
    return last.restored
