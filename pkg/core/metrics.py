"""
Reconstruction-quality metrics: PSNR and SSIM.

SSIM follows the original definition: an 11 x 11 Gaussian window of
standard deviation 1.5, constants ``C1 = (k1 L)^2`` and ``C2 = (k2 L)^2``,
evaluated at every window position that lies fully inside the image and
averaged. Color images are compared on their luminance.
"""

import logging
from dataclasses import dataclass

import numpy as np
from django.conf import settings
from django.utils.translation import gettext_lazy as _
from scipy import signal

from .exceptions import InvalidInputError
from .imgio import as_image, to_gray

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SsimParams:
    """
    SSIM window and stabilising constants.

    Attributes:
        window_size (int): odd side length of the Gaussian window.
        window_sigma (float): standard deviation of the window.
        k1 (float): luminance constant factor.
        k2 (float): contrast constant factor.
        data_range (float): dynamic range ``L`` of the intensities.
    """

    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise InvalidInputError(_("SSIM window size must be a positive odd integer."))
        if not self.window_sigma > 0 or not self.data_range > 0:
            raise InvalidInputError(_("SSIM window sigma and data range must be positive."))

    @classmethod
    def from_settings(cls, **overrides):
        conf = settings.TURBULENCE
        values = {"k1": conf["SSIM_K1"], "k2": conf["SSIM_K2"]}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def window(self):
        """Return the normalised 2-D Gaussian window."""

        radius = self.window_size // 2
        x = np.arange(-radius, radius + 1, dtype=np.float64)
        g = np.exp(-(x**2) / (2.0 * self.window_sigma**2))
        g /= g.sum()
        return np.outer(g, g)


def _pair(a, b):
    a = as_image(a)
    b = as_image(b)
    if a.shape != b.shape:
        raise InvalidInputError(
            _("Cannot compare images of shapes %(a)s and %(b)s.")
            % {"a": a.shape, "b": b.shape}
        )
    return a, b


def psnr(a, b, peak=1.0, cap=None):
    """
    Peak signal-to-noise ratio in dB.

    ``10 log10(peak^2 / MSE)`` with the MSE taken over all pixels and
    channels. Identical images have an infinite PSNR; the value reported is
    capped at `cap` (``settings.TURBULENCE["PSNR_CAP"]``, 99 dB).

    Args:
        a, b (np.ndarray): images of identical shape.
        peak (float): maximum possible intensity.
        cap (float, optional): reporting cap.

    Raises:
        InvalidInputError: shape mismatch or non-positive peak.
    """

    if not peak > 0:
        raise InvalidInputError(_("PSNR peak must be positive."))
    cap = settings.TURBULENCE["PSNR_CAP"] if cap is None else cap
    a, b = _pair(a, b)

    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return float(cap)
    return min(float(10.0 * np.log10(peak**2 / mse)), float(cap))


def ssim(a, b, params=None):
    """
    Mean structural similarity of the luminance of two images.

    Raises:
        InvalidInputError: shape mismatch or an image smaller than the window.

    Returns:
        float: value in ``[-1, 1]``; 1.0 exactly for identical inputs.
    """

    params = params or SsimParams.from_settings()
    a, b = _pair(a, b)
    if min(a.shape[:2]) < params.window_size:
        raise InvalidInputError(
            _("Image of size %(s)s is smaller than the %(w)d x %(w)d SSIM window.")
            % {"s": a.shape[:2], "w": params.window_size}
        )

    x = to_gray(a)[:, :, 0]
    y = to_gray(b)[:, :, 0]
    window = params.window()

    def filtered(plane):
        return signal.correlate(plane, window, mode="valid")

    c1 = (params.k1 * params.data_range) ** 2
    c2 = (params.k2 * params.data_range) ** 2

    mu_x = filtered(x)
    mu_y = filtered(y)
    var_x = filtered(x * x) - mu_x * mu_x
    var_y = filtered(y * y) - mu_y * mu_y
    cov = filtered(x * y) - mu_x * mu_y

    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / (
        (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    )
    return float(np.mean(ssim_map))
