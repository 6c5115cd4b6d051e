"""
Displacement-field algebra: estimation, composition, averaging, inversion.

A flow field is a ``float64`` array of shape ``(H, W, 2)`` holding
``(d_row, d_col)`` per pixel. A field ``w`` from frame A to frame B gives,
for every grid point ``x`` of A, the displacement such that ``x + w(x)`` is
the corresponding location in B; ``warp_image(B, w)`` therefore pulls B back
onto A's grid.

Features:
    - Coarse-to-fine Horn-Schunck estimation with intermediate warping.
    - Composition, arithmetic mean and endpoint error of fields.
    - Inversion by splatting negated displacements onto the four integer
      neighbours of every endpoint, weighted by ``2 - L1 distance``, with
      harmonic inpainting of the cells no endpoint reached.
    - Middlebury ``.flo`` reading and writing.

Example:
    >>> w = horn_schunck(to_gray(frame_0), to_gray(frame_1))
    >>> w_inv = invert_flow(w)
    >>> flow_magnitude_rms(compose_flow(w, w_inv), margin=10) < 0.15
    True
"""

import logging
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
from django.conf import settings
from django.utils.translation import gettext_lazy as _
from scipy import ndimage, sparse
from scipy.sparse import linalg as sparse_linalg

from .constants import FLO_MAGIC
from .exceptions import FlowFormatError, InvalidInputError
from .imgio import as_image, resample_plane, sample_plane
from .utils import interior, running_mean

logger = logging.getLogger(__name__)

# Pyramid levels smaller than this (in pixels, either side) are not built.
MIN_LEVEL_SIZE = 8


@dataclass(frozen=True)
class HornSchunckParams:
    """
    Parameters of the coarse-to-fine Horn-Schunck solver.

    Attributes:
        smoothness (float): weight of ``|grad u|^2 + |grad v|^2`` against
            the squared brightness-constancy residual (intensities in [0, 1]).
        iterations_per_level (int): Jacobi sweeps per linearisation.
        pyramid_levels (int): number of pyramid levels, finest included.
        pyramid_scale (float): size ratio between consecutive levels.
        warps_per_level (int): re-linearisations (warp + sweeps) per level.
    """

    smoothness: float = 0.01
    iterations_per_level: int = 100
    pyramid_levels: int = 4
    pyramid_scale: float = 0.5
    warps_per_level: int = 2

    def __post_init__(self):
        if not self.smoothness > 0:
            raise InvalidInputError(_("Horn-Schunck smoothness must be positive."))
        if self.iterations_per_level < 1:
            raise InvalidInputError(_("At least one Jacobi iteration is required."))
        if self.pyramid_levels < 1:
            raise InvalidInputError(_("At least one pyramid level is required."))
        if not 0 < self.pyramid_scale < 1:
            raise InvalidInputError(_("Pyramid scale must lie in (0, 1)."))
        if self.warps_per_level < 1:
            raise InvalidInputError(_("At least one warp per level is required."))

    @classmethod
    def from_settings(cls, **overrides):
        """Build parameters from ``settings.TURBULENCE``, then apply overrides."""

        conf = settings.TURBULENCE
        values = {
            "smoothness": conf["HS_SMOOTHNESS"],
            "iterations_per_level": conf["HS_ITERATIONS"],
            "pyramid_levels": conf["HS_LEVELS"],
            "pyramid_scale": conf["HS_SCALE"],
            "warps_per_level": conf["HS_WARPS"],
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def zero_flow(shape):
    """Return the identity field for a grid of ``shape[:2]``."""

    return np.zeros(tuple(shape[:2]) + (2,), dtype=np.float64)


def as_flow(flow):
    """
    Validate a flow field.

    Raises:
        InvalidInputError: not ``H x W x 2`` or not finite.
    """

    flow = np.asarray(flow, dtype=np.float64)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InvalidInputError(
            _("Expected an H x W x 2 flow field, got shape %(s)s.") % {"s": flow.shape}
        )
    if not np.all(np.isfinite(flow)):
        raise InvalidInputError(_("Flow field contains NaN or infinite values."))
    return flow


def _check_same_grid(a, b):
    if a.shape[:2] != b.shape[:2]:
        raise InvalidInputError(
            _("Grid mismatch: %(a)s vs %(b)s.") % {"a": a.shape[:2], "b": b.shape[:2]}
        )


def resize_flow(flow, shape):
    """
    Resample a field onto another grid and rescale its displacements.

    Args:
        flow (np.ndarray): ``H x W x 2`` field.
        shape (tuple[int, int]): target ``(rows, cols)``.

    Returns:
        np.ndarray: ``rows x cols x 2`` field in target-grid pixel units.
    """

    flow = as_flow(flow)
    shape = tuple(shape[:2])
    if shape == flow.shape[:2]:
        return flow.copy()
    out = np.empty(shape + (2,))
    out[:, :, 0] = resample_plane(flow[:, :, 0], shape) * (shape[0] / flow.shape[0])
    out[:, :, 1] = resample_plane(flow[:, :, 1], shape) * (shape[1] / flow.shape[1])
    return out


def _as_plane(image):
    image = as_image(image)
    if image.shape[2] != 1:
        raise InvalidInputError(
            _("Optical flow needs single-channel images; convert with to_gray first.")
        )
    return image[:, :, 0]


def _pyramid(plane, params):
    levels = [plane]
    for _level in range(1, params.pyramid_levels):
        shape = tuple(
            int(round(n * params.pyramid_scale)) for n in levels[-1].shape
        )
        if min(shape) < MIN_LEVEL_SIZE:
            break
        smoothed = ndimage.gaussian_filter(
            levels[-1], sigma=0.5 / params.pyramid_scale, mode="nearest"
        )
        levels.append(resample_plane(smoothed, shape))
    return levels[::-1]


def _neighbour_mean(plane):
    padded = np.pad(plane, 1, mode="edge")
    return 0.25 * (
        padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
    )


def _warp_plane(plane, flow):
    rows, cols = np.indices(plane.shape, dtype=np.float64)
    return sample_plane(plane, rows + flow[:, :, 0], cols + flow[:, :, 1])


def _refine(ref, tgt, flow, params):
    """Run the warp / linearise / Jacobi loop of one pyramid level."""

    grad_r_ref, grad_c_ref = np.gradient(ref)
    for _warp in range(params.warps_per_level):
        warped = _warp_plane(tgt, flow)
        grad_r_tgt, grad_c_tgt = np.gradient(warped)
        i_r = 0.5 * (grad_r_ref + grad_r_tgt)
        i_c = 0.5 * (grad_c_ref + grad_c_tgt)
        i_t = warped - ref
        denominator = 4.0 * params.smoothness + i_r**2 + i_c**2

        base_r = flow[:, :, 0].copy()
        base_c = flow[:, :, 1].copy()
        u_r, u_c = base_r.copy(), base_c.copy()
        for _sweep in range(params.iterations_per_level):
            mean_r = _neighbour_mean(u_r)
            mean_c = _neighbour_mean(u_c)
            residual = (
                i_r * (mean_r - base_r) + i_c * (mean_c - base_c) + i_t
            ) / denominator
            u_r = mean_r - i_r * residual
            u_c = mean_c - i_c * residual
        flow = np.stack([u_r, u_c], axis=-1)
    return flow


def horn_schunck(ref, tgt, params=None):
    """
    Estimate the flow mapping `ref` onto `tgt` (``ref(x) ~ tgt(x + w(x))``).

    Minimises ``(I_r u_r + I_c u_c + I_t)^2 + smoothness (|grad u_r|^2 +
    |grad u_c|^2)`` by Jacobi iteration on a Gaussian pyramid. Each level
    is re-linearised around the current estimate by warping `tgt` onto
    `ref`; spatial derivatives are central differences averaged between
    `ref` and the warped target.

    Args:
        ref (np.ndarray): single-channel reference image.
        tgt (np.ndarray): single-channel target image of the same size.
        params (HornSchunckParams, optional): defaults from settings.

    Raises:
        InvalidInputError: size mismatch or multi-channel input.

    Returns:
        np.ndarray: ``H x W x 2`` flow field.
    """

    params = params or HornSchunckParams.from_settings()
    ref_plane = _as_plane(ref)
    tgt_plane = _as_plane(tgt)
    _check_same_grid(ref_plane, tgt_plane)

    ref_levels = _pyramid(ref_plane, params)
    tgt_levels = _pyramid(tgt_plane, params)

    flow = zero_flow(ref_levels[0].shape)
    for level, (ref_l, tgt_l) in enumerate(zip(ref_levels, tgt_levels)):
        if flow.shape[:2] != ref_l.shape:
            flow = resize_flow(flow, ref_l.shape)
        flow = _refine(ref_l, tgt_l, flow, params)
        logger.debug(
            "Horn-Schunck level %d/%d %s: rms %.4f px",
            level + 1,
            len(ref_levels),
            ref_l.shape,
            flow_magnitude_rms(flow),
        )
    return flow


def compose_flow(first, second):
    """
    Chain two fields: `first` maps A to B, `second` maps B to C.

    ``result(x) = first(x) + second(x + first(x))``, reading `second`
    bilinearly (clamped at the border). The result maps A to C.

    Raises:
        InvalidInputError: grid mismatch.
    """

    first = as_flow(first)
    second = as_flow(second)
    _check_same_grid(first, second)

    rows, cols = np.indices(first.shape[:2], dtype=np.float64)
    rows = rows + first[:, :, 0]
    cols = cols + first[:, :, 1]
    out = first.copy()
    out[:, :, 0] += sample_plane(second[:, :, 0], rows, cols)
    out[:, :, 1] += sample_plane(second[:, :, 1], rows, cols)
    return out


def mean_flow(flows):
    """
    Pointwise mean of a non-empty list of fields.

    Accumulation order is the list order, so the result is reproducible and
    the mean of identical fields is that field exactly.

    Raises:
        InvalidInputError: empty list or grid mismatch.
    """

    flows = [as_flow(f) for f in flows]
    if not flows:
        raise InvalidInputError(_("Cannot average an empty list of flows."))
    for flow in flows[1:]:
        _check_same_grid(flows[0], flow)
    return running_mean(flows)


def _splat_neighbours(flow):
    """
    Yield ``(flat_index, weight, inside)`` for each of the four integer
    neighbours of every endpoint; `inside` masks neighbours within the grid.
    """

    height, width = flow.shape[:2]
    rows, cols = np.indices((height, width), dtype=np.float64)
    end_r = rows + flow[:, :, 0]
    end_c = cols + flow[:, :, 1]
    base_r = np.floor(end_r)
    base_c = np.floor(end_c)

    for dr in (0, 1):
        for dc in (0, 1):
            nr = base_r + dr
            nc = base_c + dc
            weight = 2.0 - (np.abs(end_r - nr) + np.abs(end_c - nc))
            inside = (nr >= 0) & (nr < height) & (nc >= 0) & (nc < width)
            index = (nr[inside] * width + nc[inside]).astype(np.intp)
            yield index, weight[inside], inside


def invert_flow(flow):
    """
    Invert a field by weighted splatting of negated displacements.

    For every grid point, the endpoint ``x + w(x)`` distributes ``-w(x)``
    to its four integer neighbours with weight ``2 - |endpoint -
    neighbour|_1``; accumulated values are normalised by the accumulated
    weight. Cells that received no weight are filled by `inpaint_flow`.

    Args:
        flow (np.ndarray): ``H x W x 2`` finite field mapping A to B.

    Raises:
        InvalidInputError: non-finite or malformed field.

    Returns:
        np.ndarray: the field on B's grid mapping B back to A.
    """

    flow = as_flow(flow)
    height, width = flow.shape[:2]
    size = height * width

    acc_r = np.zeros(size)
    acc_c = np.zeros(size)
    alpha = np.zeros(size)
    neg_r = -flow[:, :, 0]
    neg_c = -flow[:, :, 1]
    for index, weight, inside in _splat_neighbours(flow):
        alpha += np.bincount(index, weights=weight, minlength=size)
        acc_r += np.bincount(index, weights=weight * neg_r[inside], minlength=size)
        acc_c += np.bincount(index, weights=weight * neg_c[inside], minlength=size)

    filled = alpha != 0
    inverse = np.zeros((size, 2))
    inverse[filled, 0] = acc_r[filled] / alpha[filled]
    inverse[filled, 1] = acc_c[filled] / alpha[filled]
    inverse = inverse.reshape(height, width, 2)
    mask = alpha.reshape(height, width)

    if not filled.all():
        logger.debug("Flow inversion: inpainting %d holes", size - filled.sum())
        inverse = inpaint_flow(inverse, mask)
    return inverse


def inpaint_flow(flow, mask):
    """
    Fill the cells where `mask` is zero with the harmonic extension of the rest.

    Every hole equals the mean of its four neighbours (edge-replicated at the
    grid border). The sparse system this gives over the hole cells is
    factorised and solved directly. Known cells are never modified.

    Raises:
        InvalidInputError: grid mismatch, or a mask without any known cell.
    """

    flow = as_flow(flow)
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != flow.shape[:2]:
        raise InvalidInputError(
            _("Mask of shape %(m)s does not match flow of shape %(f)s.")
            % {"m": mask.shape, "f": flow.shape}
        )
    holes = mask == 0
    if not holes.any():
        return flow.copy()
    if holes.all():
        raise InvalidInputError(_("Cannot inpaint a field without any known value."))

    height, width = holes.shape
    hole_r, hole_c = np.nonzero(holes)
    count = hole_r.size
    number = np.full(holes.shape, -1)
    number[hole_r, hole_c] = np.arange(count)

    diagonal = np.full(count, 4.0)
    rhs = np.zeros((count, 2))
    rows, cols = [], []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nr = np.clip(hole_r + dr, 0, height - 1)
        nc = np.clip(hole_c + dc, 0, width - 1)
        # a neighbour clipped onto the cell itself cancels against the diagonal
        itself = (nr == hole_r) & (nc == hole_c)
        diagonal -= itself
        neighbour = number[nr, nc]
        unknown = (neighbour >= 0) & ~itself
        rows.append(np.nonzero(unknown)[0])
        cols.append(neighbour[unknown])
        known = neighbour < 0
        rhs[known] += flow[nr[known], nc[known]]

    off_rows = np.concatenate(rows)
    off_cols = np.concatenate(cols)
    matrix = sparse.csc_matrix(
        (
            np.concatenate([diagonal, -np.ones(off_rows.size)]),
            (
                np.concatenate([np.arange(count), off_rows]),
                np.concatenate([np.arange(count), off_cols]),
            ),
        ),
        shape=(count, count),
    )
    solve = sparse_linalg.factorized(matrix)

    out = flow.copy()
    out[hole_r, hole_c, 0] = solve(rhs[:, 0])
    out[hole_r, hole_c, 1] = solve(rhs[:, 1])
    return out


def flow_endpoint_error(a, b):
    """Mean Euclidean distance between corresponding displacement vectors."""

    a = as_flow(a)
    b = as_flow(b)
    if a.shape != b.shape:
        raise InvalidInputError(
            _("Cannot compare flows of shapes %(a)s and %(b)s.")
            % {"a": a.shape, "b": b.shape}
        )
    return float(np.mean(np.hypot(*np.moveaxis(a - b, -1, 0))))


def flow_magnitude_rms(flow, margin=0):
    """RMS displacement magnitude, optionally on the `margin`-pixel interior."""

    flow = interior(as_flow(flow), margin)
    return float(np.sqrt(np.mean(np.sum(flow**2, axis=-1))))


def write_flo(flow, path):
    """
    Write a Middlebury ``.flo`` file.

    Layout: ``PIEH``, width and height as little-endian int32, then
    ``height x width`` pairs of little-endian float32, horizontal (d_col)
    first. Values are stored in single precision.
    """

    flow = as_flow(flow)
    height, width = flow.shape[:2]
    header = FLO_MAGIC + np.array([width, height], dtype="<i4").tobytes()
    body = np.stack([flow[:, :, 1], flow[:, :, 0]], axis=-1).astype("<f4").tobytes()
    Path(path).write_bytes(header + body)


def read_flo(path):
    """
    Read a Middlebury ``.flo`` file.

    Raises:
        FlowFormatError: wrong magic bytes, negative size or a payload whose
            length disagrees with the header.
        OSError: the file cannot be read.
    """

    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FLO_MAGIC:
        raise FlowFormatError(_("%(path)s is not a .flo file.") % {"path": path})
    width, height = (int(v) for v in np.frombuffer(raw[4:12], dtype="<i4"))
    if width < 0 or height < 0 or len(raw) != 12 + width * height * 8:
        raise FlowFormatError(
            _("%(path)s: payload does not match a %(w)d x %(h)d header.")
            % {"path": path, "w": width, "h": height}
        )
    data = np.frombuffer(raw[12:], dtype="<f4").reshape(height, width, 2)
    return np.stack([data[:, :, 1], data[:, :, 0]], axis=-1).astype(np.float64)
