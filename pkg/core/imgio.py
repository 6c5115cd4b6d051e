"""
Image representation, file I/O, sub-pixel sampling and backward warping.

Images are numpy ``float64`` arrays of shape ``(H, W, C)`` with ``C`` equal
to 1 (gray) or 3 (RGB) and intensities nominally in ``[0, 1]``. Pixel
coordinates are ``(row, col)`` with the origin at the top-left pixel; flow
fields store displacements in the same order, ``(d_row, d_col)``.

Features:
    - Load/save binary PGM (P5), PPM (P6) and 8-bit PNG through Pillow;
      values are scaled to ``[0, 1]`` on load and clamped/quantized only
      on save.
    - Frame sequences as directories, ordered by file name.
    - Luminance conversion (Rec. 601 weights).
    - Bilinear sampling and backward warping with clamp-to-edge borders,
      built on `scipy.ndimage.map_coordinates`.
    - Grid resampling with aligned pixel centers (pyramids, reduced-size flow).

Example:
    >>> img = load_image("frames/frame_0001.png")
    >>> flow = np.zeros(img.shape[:2] + (2,))
    >>> np.array_equal(warp_image(img, flow), img)
    True
"""

import logging
from pathlib import Path

import numpy as np
from django.utils.translation import gettext_lazy as _
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .constants import LUMA_WEIGHTS, ImageFormat
from .exceptions import ImageFormatError, InvalidInputError

logger = logging.getLogger(__name__)

# Pillow modes accepted as-is, and the channel count they decode to.
_NATIVE_MODES = {"L": 1, "RGB": 3}
# Pillow modes that are 8-bit images in disguise.
_CONVERTIBLE_MODES = {"1": "L", "P": "RGB", "LA": "L", "RGBA": "RGB"}


def as_image(array):
    """
    Validate an array and return it in the Image layout.

    Args:
        array (array_like): ``(H, W)`` or ``(H, W, C)`` intensities.

    Raises:
        InvalidInputError: wrong rank, channel count other than 1 or 3,
            empty image or non-finite values.

    Returns:
        np.ndarray: ``float64`` array of shape ``(H, W, C)``.
    """

    image = np.asarray(array, dtype=np.float64)
    if image.ndim == 2:
        image = image[:, :, np.newaxis]
    if image.ndim != 3 or image.shape[2] not in (1, 3):
        raise InvalidInputError(
            _("Expected an H x W x C image with 1 or 3 channels, got shape %(s)s.")
            % {"s": image.shape}
        )
    if image.shape[0] == 0 or image.shape[1] == 0:
        raise InvalidInputError(_("Image must have at least one pixel."))
    if not np.all(np.isfinite(image)):
        raise InvalidInputError(_("Image contains NaN or infinite values."))
    return image


def load_image(path):
    """
    Read an image file into ``[0, 1]`` intensities.

    Args:
        path (str | Path): a PGM, PPM or PNG file with 8-bit samples.

    Raises:
        OSError: the file is missing, unreadable or truncated.
        ImageFormatError: the file is not an image Pillow understands, or
            its sample depth is not 8 bits.

    Returns:
        np.ndarray: ``(H, W, 1)`` for gray files, ``(H, W, 3)`` for color.
    """

    try:
        with Image.open(path) as pil:
            pil.load()
            mode = pil.mode
            if mode in _CONVERTIBLE_MODES:
                pil = pil.convert(_CONVERTIBLE_MODES[mode])
                mode = pil.mode
            if mode not in _NATIVE_MODES:
                raise ImageFormatError(
                    _("Unsupported image mode %(mode)s in %(path)s (8-bit gray/RGB only).")
                    % {"mode": mode, "path": path}
                )
            data = np.asarray(pil, dtype=np.float64) / 255.0
    except UnidentifiedImageError as exc:
        raise ImageFormatError(
            _("Cannot identify image file %(path)s.") % {"path": path}
        ) from exc

    return as_image(data)


def save_image(image, path):
    """
    Clamp, quantize to 8 bits and write an image.

    The format follows the extension of `path` (``.pgm``, ``.ppm`` or
    ``.png``). Values are clamped to ``[0, 1]`` before rounding.

    Raises:
        ImageFormatError: unsupported extension.
        OSError: the path cannot be written (missing parent, directory, ...).
    """

    image = as_image(image)
    if Path(path).is_dir():
        raise IsADirectoryError(
            _("Cannot write an image over the directory %(path)s.") % {"path": path}
        )
    if ImageFormat.from_path(path) is None:
        raise ImageFormatError(
            _("Cannot infer an image format from %(path)s.") % {"path": path}
        )

    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    # uint8 2-D arrays become mode "L", H x W x 3 arrays mode "RGB".
    if quantized.shape[2] == 1:
        quantized = quantized[:, :, 0]
    Image.fromarray(quantized).save(path)


def load_sequence(directory):
    """
    Load every image of a directory, ordered lexicographically by file name.

    Files whose extension is not a supported image format are skipped, so a
    manifest or `.flo` files may sit next to the frames.

    Raises:
        InvalidInputError: the directory holds no image files.
        OSError: the directory cannot be listed or a frame cannot be read.

    Returns:
        tuple[list[np.ndarray], list[Path]]: frames and their paths.
    """

    directory = Path(directory)
    paths = sorted(
        (p for p in directory.iterdir() if p.is_file() and ImageFormat.from_path(p)),
        key=lambda p: p.name,
    )
    if not paths:
        raise InvalidInputError(
            _("No image frames found in %(dir)s.") % {"dir": directory}
        )

    logger.debug("Loading %d frames from %s", len(paths), directory)
    return [load_image(p) for p in paths], paths


def save_sequence(frames, directory, prefix="frame_", extension="png"):
    """
    Write frames as ``<prefix>0001.<extension>``, ``<prefix>0002...``.

    The counter is zero-padded to at least four digits so that the file
    names sort in temporal order.

    Returns:
        list[Path]: the written paths, in frame order.
    """

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(frames))))
    paths = []
    for index, frame in enumerate(frames, start=1):
        path = directory / f"{prefix}{index:0{width}d}.{extension}"
        save_image(frame, path)
        paths.append(path)
    return paths


def to_gray(image):
    """
    Convert to a single luminance channel.

    RGB input is weighted ``0.299 R + 0.587 G + 0.114 B``; gray input is
    returned unchanged.

    Raises:
        InvalidInputError: channel count other than 1 or 3.
    """

    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 3 and image.shape[2] not in (1, 3):
        raise InvalidInputError(
            _("Cannot convert a %(c)d-channel image to gray.") % {"c": image.shape[2]}
        )
    image = as_image(image)
    if image.shape[2] == 1:
        return image
    return (image @ np.asarray(LUMA_WEIGHTS))[:, :, np.newaxis]


def _clamped_coordinates(shape, rows, cols):
    rows = np.clip(rows, 0.0, shape[0] - 1)
    cols = np.clip(cols, 0.0, shape[1] - 1)
    return np.stack([rows, cols])


def bilinear_sample(image, point):
    """
    Interpolate an image at a real-valued ``(row, col)`` position.

    Coordinates outside ``[0, H-1] x [0, W-1]`` are clamped componentwise
    before interpolation, so the function is total.

    Returns:
        np.ndarray: one value per channel.
    """

    image = as_image(image)
    coords = _clamped_coordinates(
        image.shape, np.atleast_1d(float(point[0])), np.atleast_1d(float(point[1]))
    )
    return np.array(
        [
            ndimage.map_coordinates(image[:, :, c], coords, order=1, mode="nearest")[0]
            for c in range(image.shape[2])
        ]
    )


def sample_plane(plane, rows, cols):
    """Bilinearly sample a 2-D array at coordinate arrays, clamping to the grid."""

    coords = _clamped_coordinates(plane.shape, rows, cols)
    return ndimage.map_coordinates(plane, coords, order=1, mode="nearest")


def warp_image(image, flow):
    """
    Backward-warp an image by a flow field: ``out(x) = image(x + flow(x))``.

    Each channel is sampled bilinearly with clamp-to-edge borders, so the
    output stays within the input's value range and a zero flow reproduces
    the input exactly.

    Raises:
        InvalidInputError: image and flow grids differ.
    """

    image = as_image(image)
    flow = np.asarray(flow, dtype=np.float64)
    if flow.shape != image.shape[:2] + (2,):
        raise InvalidInputError(
            _("Flow of shape %(f)s does not match image of shape %(i)s.")
            % {"f": flow.shape, "i": image.shape}
        )

    rows, cols = np.indices(image.shape[:2], dtype=np.float64)
    rows = rows + flow[:, :, 0]
    cols = cols + flow[:, :, 1]
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[:, :, c] = sample_plane(image[:, :, c], rows, cols)
    return out


def resample_plane(plane, shape):
    """
    Bilinearly resample a 2-D array onto a ``shape`` grid.

    Pixel centers are aligned (``(i + 0.5) / scale - 0.5``), so resampling a
    constant plane gives the same constant and a round trip keeps features
    in place.
    """

    rows = (np.arange(shape[0]) + 0.5) * (plane.shape[0] / shape[0]) - 0.5
    cols = (np.arange(shape[1]) + 0.5) * (plane.shape[1] / shape[1]) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return sample_plane(plane, rr, cc)


def resize_image(image, shape):
    """
    Resize every channel to ``shape`` (rows, cols).

    Downscaling first low-passes with a Gaussian of ``0.5 / scale`` pixels
    along each shrinking axis.
    """

    image = as_image(image)
    shape = tuple(int(n) for n in shape[:2])
    if min(shape) < 1:
        raise InvalidInputError(_("Cannot resize to %(s)s.") % {"s": shape})
    if shape == image.shape[:2]:
        return image.copy()

    sigma = [
        0.5 * old / new if new < old else 0.0 for old, new in zip(image.shape[:2], shape)
    ]
    out = np.empty(shape + (image.shape[2],))
    for c in range(image.shape[2]):
        plane = image[:, :, c]
        if any(sigma):
            plane = ndimage.gaussian_filter(plane, sigma=sigma, mode="nearest")
        out[:, :, c] = resample_plane(plane, shape)
    return out
