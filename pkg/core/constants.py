"""
Enumerations and fixed constants shared by the restoration apps.

Using Django's `models.TextChoices` / `models.IntegerChoices` keeps the
allowed values of a concept in one place and gives every value a readable
label that management commands can show in their help text.

Contents:
    ImageFormat: image file formats understood by `core.imgio`.
    SceneKind: synthetic test scenes produced by `restoration.turbsim`.
    ExitCode: the exit-code contract shared by all management commands.
    FLO_MAGIC: the four magic bytes that open a Middlebury `.flo` file.
"""

from django.db import models


class ImageFormat(models.TextChoices):
    """
    Image file formats, keyed by file extension (without the dot).

    Attributes:
        PGM (str): binary gray-scale netpbm (P5), maxval 255.
        PPM (str): binary RGB netpbm (P6), maxval 255.
        PNG (str): 8-bit gray or RGB PNG.
    """

    PGM = "pgm", "Portable Graymap"
    PPM = "ppm", "Portable Pixmap"
    PNG = "png", "Portable Network Graphics"

    @classmethod
    def from_path(cls, path):
        """Return the format matching the extension of `path`, or None."""

        suffix = str(path).rsplit(".", 1)[-1].lower() if "." in str(path) else ""
        return cls(suffix) if suffix in cls.values else None


class SceneKind(models.TextChoices):
    """
    Deterministic synthetic scenes used as ground truth in tests and demos.

    Attributes:
        SMOOTH (str): sum of smooth bumps and low-frequency waves.
        BLOCKS (str): hard-edged rectangles and discs on a flat background.
        SCENE (str): blocks over a smooth background.
    """

    SMOOTH = "smooth", "Smooth"
    BLOCKS = "blocks", "Blocks"
    SCENE = "scene", "Scene"


class ExitCode(models.IntegerChoices):
    """
    Process exit codes of the management commands.

    Attributes:
        SUCCESS (int): the command finished and wrote its outputs.
        FAILURE (int): runtime or I/O failure.
        USAGE (int): bad flags, bad parameter values or unusable inputs.
    """

    SUCCESS = 0, "Success"
    FAILURE = 1, "Runtime or I/O failure"
    USAGE = 2, "Usage error"


FLO_MAGIC = b"PIEH"

# Rec. 601 luma weights, also used by the SSIM luminance conversion.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)
