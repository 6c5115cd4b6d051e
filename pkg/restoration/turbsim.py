"""
Synthetic turbulence: the forward model used as ground truth in tests.

Frames are produced from a sharp image by a random smooth warp, a Gaussian
blur of random width and additive Gaussian noise. Warps are Gaussian random
fields: white noise smoothed by a Gaussian of the requested correlation
length and rescaled to the requested RMS amplitude.

The module also synthesises point spread functions from a random pupil
wavefront (tilt, defocus and higher-order modes) by Fourier optics, which
lets the tests check that the average of many instantaneous PSFs is close to
a Gaussian.

Features:
    - `random_smooth_flow`, `simulate_sequence`: the frame simulator.
    - `synthetic_scene`: deterministic ground-truth images.
    - `wavefront_psf`, `average_psf`, `fit_gaussian_psf`: the PSF model.

Example:
    >>> gt = synthetic_scene(128, 128, SceneKind.BLOCKS, seed=3)
    >>> frames, flows = simulate_sequence(gt, 20, TurbulenceParams(seed=7))
"""

import logging
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np
from django.conf import settings
from django.utils.translation import gettext_lazy as _
from scipy import ndimage

from core.constants import SceneKind
from core.exceptions import InvalidInputError
from core.flow import zero_flow
from core.imgio import as_image, warp_image
from core.utils import RunningMean

from .deconv import DELTA_SIGMA, GaussianKernel, convolve

logger = logging.getLogger(__name__)

HIGHER_ORDER_MODES = ("coma_x", "coma_y", "trefoil_x", "trefoil_y", "spherical")

# Fraction of the second moment of a 2-D Gaussian kept inside a disc of 3 sigma.
WINDOW_SIGMAS = 3.0
_TAIL = math.exp(-(WINDOW_SIGMAS**2) / 2.0)
WINDOW_MOMENT_FACTOR = (1.0 - (1.0 + WINDOW_SIGMAS**2 / 2.0) * _TAIL) / (1.0 - _TAIL)


@dataclass(frozen=True)
class TurbulenceParams:
    """
    Parameters of the frame simulator.

    Attributes:
        amplitude (float): RMS displacement magnitude of each warp, in pixels.
        correlation_length (float): smoothing length of the warps, in pixels.
        blur_sigma_mean (float): mean width of the per-frame Gaussian blur.
        blur_sigma_jitter (float): half-width of the uniform blur spread.
        noise_sigma (float): standard deviation of the additive noise.
        seed (int): base seed; frame ``t`` uses ``seed + t`` for its warp.
    """

    amplitude: float = 2.0
    correlation_length: float = 10.0
    blur_sigma_mean: float = 1.0
    blur_sigma_jitter: float = 0.0
    noise_sigma: float = 0.01
    seed: int = 0

    def __post_init__(self):
        for name in ("amplitude", "blur_sigma_mean", "blur_sigma_jitter", "noise_sigma"):
            if getattr(self, name) < 0:
                raise InvalidInputError(_("%(name)s must not be negative.") % {"name": name})
        if self.correlation_length < 1:
            raise InvalidInputError(_("correlation_length must be at least 1 pixel."))
        if self.seed < 0:
            raise InvalidInputError(_("seed must not be negative."))

    @classmethod
    def from_settings(cls, **overrides):
        conf = settings.TURBULENCE
        values = {
            "amplitude": conf["SIM_AMPLITUDE"],
            "correlation_length": conf["SIM_CORRELATION"],
            "blur_sigma_mean": conf["SIM_BLUR_MEAN"],
            "blur_sigma_jitter": conf["SIM_BLUR_JITTER"],
            "noise_sigma": conf["SIM_NOISE"],
            "seed": conf["SIM_SEED"],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def random_smooth_flow(seed, height, width, amplitude, correlation_length):
    """
    Draw a zero-mean Gaussian-random-field displacement.

    Two independent white-noise planes are smoothed by a Gaussian of standard
    deviation `correlation_length` and jointly rescaled so that the RMS
    displacement magnitude equals `amplitude`.

    Returns:
        np.ndarray: ``height x width x 2`` field; exactly zero for amplitude 0.
    """

    if amplitude < 0:
        raise InvalidInputError(_("Flow amplitude must not be negative."))
    if amplitude == 0:
        return zero_flow((height, width))

    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, height, width))
    field = np.stack(
        [ndimage.gaussian_filter(plane, sigma=correlation_length) for plane in noise],
        axis=-1,
    )
    rms = np.sqrt(np.mean(np.sum(field**2, axis=-1)))
    return field * (amplitude / rms)


def simulate_sequence(gt, frame_count, params=None):
    """
    Render `frame_count` degraded observations of `gt`.

    Frame ``t`` is ``gt`` backward-warped by ``d_t = random_smooth_flow(seed +
    t, ...)``, blurred by a Gaussian of width ``blur_sigma_mean +
    U(-jitter, jitter)`` (skipped below 0.05 px), corrupted by noise of
    standard deviation `noise_sigma` and clamped to ``[0, 1]``. Blur width and
    noise for frame ``t`` come from a generator seeded with ``(seed, t)``, so
    every frame can be rendered independently.

    Returns:
        tuple[list[np.ndarray], list[np.ndarray]]: frames and the true
            displacements ``d_t``.
    """

    params = params or TurbulenceParams.from_settings()
    gt = as_image(gt)
    if frame_count < 1:
        raise InvalidInputError(_("At least one frame must be simulated."))

    height, width = gt.shape[:2]
    frames, flows = [], []
    for t in range(frame_count):
        flow = random_smooth_flow(
            params.seed + t, height, width, params.amplitude, params.correlation_length
        )
        frame = warp_image(gt, flow)

        rng = np.random.default_rng([params.seed, t])
        sigma = params.blur_sigma_mean + params.blur_sigma_jitter * rng.uniform(-1.0, 1.0)
        if sigma >= DELTA_SIGMA:
            frame = convolve(frame, GaussianKernel(sigma))
        if params.noise_sigma > 0:
            frame = frame + rng.normal(0.0, params.noise_sigma, frame.shape)

        frames.append(np.clip(frame, 0.0, 1.0))
        flows.append(flow)

    logger.info(
        "Simulated %d frames of %dx%d (amplitude %.2f px, blur %.2f px, noise %.3f)",
        frame_count,
        height,
        width,
        params.amplitude,
        params.blur_sigma_mean,
        params.noise_sigma,
    )
    return frames, flows


def _smooth_background(rng, height, width):
    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    image = np.zeros((height, width))
    for _bump in range(6):
        r0, c0 = rng.uniform(0, height), rng.uniform(0, width)
        spread = rng.uniform(0.08, 0.25) * min(height, width)
        image += rng.uniform(-1, 1) * np.exp(
            -((rows - r0) ** 2 + (cols - c0) ** 2) / (2 * spread**2)
        )
    for _wave in range(3):
        period = rng.uniform(12, 32)
        angle = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        image += 0.5 * np.sin(
            2 * np.pi * (rows * np.sin(angle) + cols * np.cos(angle)) / period + phase
        )
    image -= image.min()
    return 0.1 + 0.8 * image / max(image.max(), 1e-12)


def _paste_shapes(image, rng):
    height, width = image.shape
    rows, cols = np.mgrid[0:height, 0:width]
    for index in range(8):
        value = rng.uniform(0.05, 0.95)
        if index % 2 == 0:
            h = rng.integers(height // 8, height // 3 + 1)
            w = rng.integers(width // 8, width // 3 + 1)
            r0 = rng.integers(0, height - h + 1)
            c0 = rng.integers(0, width - w + 1)
            image[r0 : r0 + h, c0 : c0 + w] = value
        else:
            radius = rng.uniform(0.06, 0.15) * min(height, width)
            r0, c0 = rng.uniform(0, height), rng.uniform(0, width)
            image[(rows - r0) ** 2 + (cols - c0) ** 2 <= radius**2] = value
    return image


def synthetic_scene(height, width, kind=SceneKind.SCENE, seed=0):
    """
    Build a deterministic gray test image with values in ``[0.05, 0.95]``.

    `kind` selects smooth content only, hard-edged shapes on a flat
    background, or hard-edged shapes over smooth content.
    """

    kind = SceneKind(kind)
    if height < 8 or width < 8:
        raise InvalidInputError(_("Synthetic scenes need at least 8 x 8 pixels."))
    rng = np.random.default_rng(seed)

    if kind == SceneKind.SMOOTH:
        image = _smooth_background(rng, height, width)
    elif kind == SceneKind.BLOCKS:
        image = _paste_shapes(np.full((height, width), 0.5), rng)
    else:
        image = _paste_shapes(_smooth_background(rng, height, width), rng)
    return as_image(image)


@dataclass(frozen=True)
class WavefrontParams:
    """
    Pupil and wavefront statistics of the PSF synthesiser.

    Phases are in radians over the unit aperture ``|u| <= 1``.

    Attributes:
        grid_size (int): pupil samples per side.
        aperture_radius (float): aperture radius as a fraction of the grid.
        tilt (tuple[float, float]): mean tilt coefficients (row, col).
        defocus (float): mean defocus coefficient.
        higher_order_sigma (float): standard deviation of each higher-order
            coefficient.
        higher_order_modes (tuple[str, ...]): modes drawn every time.
        tilt_jitter (float): per-draw standard deviation of the tilt.
        defocus_jitter (float): per-draw standard deviation of the defocus.
        pad_factor (int): zero-padding factor of the Fourier transform.
    """

    grid_size: int = 128
    aperture_radius: float = 0.25
    tilt: tuple = (0.0, 0.0)
    defocus: float = 0.0
    higher_order_sigma: float = 0.0
    higher_order_modes: tuple = HIGHER_ORDER_MODES
    tilt_jitter: float = 0.0
    defocus_jitter: float = 0.0
    pad_factor: int = 2

    def __post_init__(self):
        if self.grid_size < 8:
            raise InvalidInputError(_("Pupil grid must have at least 8 samples per side."))
        if not 0 < self.aperture_radius <= 0.5:
            raise InvalidInputError(_("aperture_radius must lie in (0, 0.5]."))
        if self.pad_factor < 1:
            raise InvalidInputError(_("pad_factor must be at least 1."))
        if min(self.higher_order_sigma, self.tilt_jitter, self.defocus_jitter) < 0:
            raise InvalidInputError(_("Wavefront spreads must not be negative."))
        unknown = set(self.higher_order_modes) - set(HIGHER_ORDER_MODES)
        if unknown:
            raise InvalidInputError(
                _("Unknown wavefront modes: %(m)s.") % {"m": ", ".join(sorted(unknown))}
            )
        object.__setattr__(self, "tilt", tuple(float(t) for t in self.tilt))
        object.__setattr__(self, "higher_order_modes", tuple(self.higher_order_modes))

    def pupil_coordinates(self):
        """Return ``(u_row, u_col)`` normalised so the aperture edge is at 1."""

        n = self.grid_size
        u = (np.arange(n) - n / 2) / (self.aperture_radius * n)
        return np.meshgrid(u, u, indexing="ij")


@dataclass(frozen=True)
class PsfImage:
    """A PSF normalised to unit sum, with its energy before normalisation."""

    data: np.ndarray
    energy: float

    @property
    def center(self):
        """Grid position of the zero spatial frequency."""

        return tuple(n // 2 for n in self.data.shape)


class GaussianFit(NamedTuple):
    mu: tuple
    sigma: float
    residual: float
    scaled_residual: float


def _mode(name, u_row, u_col):
    rho2 = u_row**2 + u_col**2
    if name == "coma_x":
        return (3 * rho2 - 2) * u_col
    if name == "coma_y":
        return (3 * rho2 - 2) * u_row
    if name == "trefoil_x":
        return u_col**3 - 3 * u_col * u_row**2
    if name == "trefoil_y":
        return 3 * u_col**2 * u_row - u_row**3
    return 6 * rho2**2 - 6 * rho2 + 1


def wavefront_psf(params, rng):
    """
    Synthesise one instantaneous PSF.

    The wavefront ``a . u + b |u|^2 + sum c_m V_m(u)`` is built with tilt and
    defocus jittered around their means and ``c_m ~ N(0, higher_order_sigma^2)``.
    The PSF is the squared magnitude of the zero-padded 2-D Fourier transform
    of the pupil field, shifted so that zero frequency sits at the grid center.

    Args:
        params (WavefrontParams): pupil description.
        rng (np.random.Generator): source of the random coefficients.

    Returns:
        PsfImage: ``(pad_factor * grid_size)^2`` PSF.
    """

    u_row, u_col = params.pupil_coordinates()
    rho2 = u_row**2 + u_col**2
    aperture = rho2 <= 1.0

    tilt = np.asarray(params.tilt) + params.tilt_jitter * rng.standard_normal(2)
    defocus = params.defocus + params.defocus_jitter * rng.standard_normal()
    phase = tilt[0] * u_row + tilt[1] * u_col + defocus * rho2
    for name in params.higher_order_modes:
        coefficient = params.higher_order_sigma * rng.standard_normal()
        phase = phase + coefficient * _mode(name, u_row, u_col)

    size = params.grid_size * params.pad_factor
    pupil = np.zeros((size, size), dtype=np.complex128)
    pupil[: params.grid_size, : params.grid_size] = aperture * np.exp(1j * phase)
    intensity = np.abs(np.fft.fftshift(np.fft.fft2(pupil))) ** 2

    energy = float(intensity.sum())
    return PsfImage(data=intensity / energy, energy=energy)


def average_psf(params, draws, seed=0):
    """Mean of `draws` instantaneous PSFs drawn from one seeded generator."""

    if draws < 1:
        raise InvalidInputError(_("At least one PSF draw is required."))
    rng = np.random.default_rng(seed)
    data = RunningMean()
    energy = RunningMean()
    for _draw in range(draws):
        psf = wavefront_psf(params, rng)
        data.add(psf.data)
        energy.add(psf.energy)
    mean = data.value()
    return PsfImage(data=mean / mean.sum(), energy=float(energy.value()))


def _gaussian_on_grid(shape, center, sigma):
    rows, cols = np.indices(shape, dtype=np.float64)
    g = np.exp(-((rows - center[0]) ** 2 + (cols - center[1]) ** 2) / (2 * sigma**2))
    return g / g.sum()


def fit_gaussian_psf(psf, max_rounds=20):
    """
    Fit an isotropic Gaussian to a PSF by windowed moments.

    The centroid and the mean of the two principal second central moments are
    measured inside a disc of three standard deviations around the current
    centroid, corrected for the truncation of that disc, and re-measured until
    the estimate settles. `residual` is the relative L2 distance between the
    unit-sum PSF and the unit-sum fitted Gaussian; `scaled_residual` measures the
    same distance after the least-squares amplitude of the Gaussian, which
    discounts energy the PSF carries outside its core.

    Args:
        psf (PsfImage | np.ndarray): nonnegative grid.

    Raises:
        InvalidInputError: negative values or zero total mass.

    Returns:
        GaussianFit: `mu` relative to the grid center ``(rows // 2, cols // 2)``,
            `sigma` in pixels and both residuals.
    """

    data = np.asarray(getattr(psf, "data", psf), dtype=np.float64)
    if data.ndim != 2 or np.any(data < 0) or not np.all(np.isfinite(data)):
        raise InvalidInputError(_("A PSF must be a finite nonnegative 2-D grid."))
    total = data.sum()
    if total <= 0:
        raise InvalidInputError(_("Cannot fit a Gaussian to an all-zero PSF."))
    data = data / total

    rows, cols = np.indices(data.shape, dtype=np.float64)
    window = np.ones(data.shape, dtype=bool)
    correction = 1.0
    center = sigma = None
    for _round in range(max_rounds):
        weights = np.where(window, data, 0.0)
        mass = weights.sum()
        if mass <= 0:
            break
        mean_r = float((weights * rows).sum() / mass)
        mean_c = float((weights * cols).sum() / mass)
        cov = np.cov(
            np.stack([rows.ravel(), cols.ravel()]),
            aweights=weights.ravel(),
            bias=True,
        )
        new_sigma = math.sqrt(max(np.linalg.eigvalsh(cov).mean() / correction, 1e-24))
        settled = (
            sigma is not None
            and abs(new_sigma - sigma) < 1e-6 * new_sigma
            and abs(mean_r - center[0]) < 1e-6
            and abs(mean_c - center[1]) < 1e-6
        )
        center, sigma = (mean_r, mean_c), new_sigma
        if settled:
            break
        radius = WINDOW_SIGMAS * sigma
        window = (rows - mean_r) ** 2 + (cols - mean_c) ** 2 <= radius**2
        correction = WINDOW_MOMENT_FACTOR

    model = _gaussian_on_grid(data.shape, center, sigma)
    norm = np.linalg.norm(data)
    residual = float(np.linalg.norm(data - model) / norm)
    scale = float((model * data).sum() / (model * model).sum())
    scaled_residual = float(np.linalg.norm(data - scale * model) / norm)

    origin = tuple(n // 2 for n in data.shape)
    mu = (center[0] - origin[0], center[1] - origin[1])
    logger.debug(
        "Gaussian PSF fit: mu=%s sigma=%.3f residual=%.4f scaled=%.4f",
        mu, sigma, residual, scaled_residual,
    )
    return GaussianFit(mu=mu, sigma=sigma, residual=residual, scaled_residual=scaled_residual)
