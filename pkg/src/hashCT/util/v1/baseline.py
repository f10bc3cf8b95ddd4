"""
This module implements the analytic baseline: FDK for cone-beam data, fan-beam
FBP as its planar special case, and a mirror-and-rolloff sinogram extrapolation
for truncated rows.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy import fft, ndimage
from tqdm import tqdm

from hashCT.models.v1.baseline import FilterSpec, FilterWindow
from hashCT.models.v1.data import GridSpec, Sinogram, VolumeGrid
from hashCT.models.v1.geometry import ScanMode
from hashCT.util.v1.errors import UnsupportedError
from hashCT.util.v1.geometry import view_angles

logger = logging.getLogger(__name__)


def ramp_response(n_cols: int, spacing: float, spec: FilterSpec) -> np.ndarray:
    """Frequency response of the band-limited Ram-Lak kernel on the padded row.

    The kernel is built in the spatial domain (1/(4 d^2) at 0, -1/(pi n d)^2 at
    odd n). Its residual sum is moved onto the tap at half the padded length,
    which never meets a detector row of at most half that length, so the
    response is exactly zero at DC while the filtered rows stay the linear
    convolution with the Ram-Lak kernel.

    Args:
        n_cols (int): Detector columns before padding.
        spacing (float): Column spacing in mm.
        spec (FilterSpec): Filter specification.

    Returns:
        np.ndarray: Real, even response of the padded length.
    """
    size = 1 << int(math.ceil(math.log2(spec.padding * n_cols)))
    n = np.rint(fft.fftfreq(size) * size)
    kernel = np.zeros(size)
    kernel[n == 0] = 1.0 / (4.0 * spacing**2)
    odd = n % 2 != 0
    kernel[odd] = -1.0 / (np.pi * n[odd] * spacing) ** 2
    kernel[size // 2] -= kernel.sum()
    response = spacing * fft.fft(kernel).real
    if spec.window == FilterWindow.COSINE:
        freqs = fft.fftfreq(size, d=spacing)
        response *= np.cos(np.pi * freqs * spacing)
    return response


def filter_rows(values: np.ndarray, spacing: float, spec: FilterSpec) -> np.ndarray:
    """Ramp-filter the last axis of ``values`` with zero padding."""
    response = ramp_response(values.shape[-1], spacing, spec)
    spectrum = fft.fft(values, n=response.size, axis=-1)
    filtered = fft.ifft(spectrum * response, axis=-1).real
    return filtered[..., : values.shape[-1]]


def extrapolate_sinogram(
    sinogram: Sinogram, margin_frac: float = 0.25, edge_tolerance: float = 1e-6
) -> Sinogram:
    """Widen the detector and extend truncated rows smoothly to zero.

    Each side of a row whose edge value exceeds ``edge_tolerance`` is continued
    with its mirror image times a cosine rolloff that equals 1 at the edge and
    0 at the end of the margin. Sides ending at zero are padded with zeros.

    Args:
        sinogram (Sinogram): Measured projections.
        margin_frac (float): Padding per side as a fraction of the width.
        edge_tolerance (float): Threshold telling truncated from complete edges.

    Returns:
        Sinogram: Sinogram on a detector wider by two margins.
    """
    geom = sinogram.geometry
    cols = geom.detector_cols
    margin = max(2, int(round(margin_frac * cols)))
    k = np.arange(margin)
    rolloff = 0.5 * (1.0 + np.cos(np.pi * k / (margin - 1)))
    mirror = np.minimum(k, cols - 1)

    values = sinogram.values.astype(np.float64)
    left_edge = values[..., 0]
    right_edge = values[..., -1]
    left = values[..., mirror] * rolloff
    right = values[..., cols - 1 - mirror] * rolloff
    left = np.where((np.abs(left_edge) > edge_tolerance)[..., None], left, 0.0)
    right = np.where((np.abs(right_edge) > edge_tolerance)[..., None], right, 0.0)

    truncated = np.count_nonzero(np.abs(left_edge) > edge_tolerance) + np.count_nonzero(
        np.abs(right_edge) > edge_tolerance
    )
    if truncated == 0:
        logger.warning("Extrapolating a sinogram without truncated rows")
    extended = np.concatenate([left[..., ::-1], values, right], axis=-1)
    geometry = geom.model_copy(update={"detector_cols": cols + 2 * margin})
    return Sinogram(geometry=geometry, values=extended)


def fdk_reconstruct(
    sinogram: Sinogram,
    grid: GridSpec,
    spec: FilterSpec = FilterSpec(),
    extrapolate: bool = False,
    margin_frac: float = 0.25,
    workers: int = 1,
    progress: bool = False,
) -> VolumeGrid:
    """Filtered backprojection of a full-circle scan.

    Projections are cosine weighted and ramp filtered on detector coordinates
    scaled to the isocenter, then backprojected voxel by voxel with the
    distance weight (SID / U)^2 and bilinear detector sampling.

    Args:
        sinogram (Sinogram): Measured projections.
        grid (GridSpec): Output voxel grid.
        spec (FilterSpec): Ramp filter.
        extrapolate (bool): Extend truncated rows before filtering.
        margin_frac (float): Extrapolation margin per side.
        workers (int): Threads sharing the voxels.
        progress (bool): Show a progress bar over views.

    Returns:
        VolumeGrid: Attenuation in 1/mm.

    Raises:
        UnsupportedError: If the scan does not cover a full circle.
    """
    geom = sinogram.geometry
    if abs(geom.angle_range - 2.0 * math.pi) > 1e-9:
        raise UnsupportedError("short-scan reconstruction is not implemented")
    if extrapolate:
        sinogram = extrapolate_sinogram(sinogram, margin_frac)
        geom = sinogram.geometry

    sid = geom.source_to_isocenter_mm
    scale = sid / geom.source_to_detector_mm
    ds, dt = geom.pixel_pitch_mm[0] * scale, geom.pixel_pitch_mm[1] * scale
    s = ((np.arange(geom.detector_cols) + 0.5) - geom.detector_cols / 2.0) * ds
    t = ((np.arange(geom.detector_rows) + 0.5) - geom.detector_rows / 2.0) * dt
    weight = sid / np.sqrt(sid**2 + s[None, :] ** 2 + t[:, None] ** 2)
    filtered = filter_rows(sinogram.values * weight[None], ds, spec)

    centers = grid.voxel_centers()
    values = np.zeros(centers.shape[0], dtype=np.float64)
    chunks = np.array_split(np.arange(centers.shape[0]), max(1, workers))
    planar = geom.mode == ScanMode.FAN2D
    angles = view_angles(geom)

    def _backproject(view, idx):
        phi = angles[view]
        x = centers[idx]
        u = sid - (x[:, 0] * np.cos(phi) + x[:, 1] * np.sin(phi))
        lateral = -x[:, 0] * np.sin(phi) + x[:, 1] * np.cos(phi)
        col = sid * lateral / u / ds + geom.detector_cols / 2.0 - 0.5
        if planar:
            row = np.zeros_like(col)
        else:
            row = sid * x[:, 2] / u / dt + geom.detector_rows / 2.0 - 0.5
        sampled = ndimage.map_coordinates(
            filtered[view], [row, col], order=1, mode="constant", cval=0.0
        )
        values[idx] += (sid / u) ** 2 * sampled

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for view in tqdm(range(geom.n_views), disable=not progress, desc="fdk"):
            list(pool.map(lambda idx, v=view: _backproject(v, idx), chunks))

    values *= 0.5 * geom.angle_range / geom.n_views
    logger.info(
        "FDK reconstruction of %d views onto %s voxels%s",
        geom.n_views,
        grid.dims,
        " with extrapolation" if extrapolate else "",
    )
    return VolumeGrid(grid=grid, values=values.reshape(grid.shape))
