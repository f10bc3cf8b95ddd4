"""
This module provides PSNR, slice-wise SSIM, FOV masks, the rim-artifact ratio
and 8-bit difference images.
"""

import csv
import logging
from pathlib import Path
from typing import Iterable, Optional, Tuple

import numpy as np
from PIL import Image, PngImagePlugin
from scipy import ndimage

from hashCT.models.v1.data import GridSpec, VolumeGrid
from hashCT.models.v1.geometry import Domain
from hashCT.models.v1.metrics import MetricsConfig, MetricsReport
from hashCT.util.v1.errors import BoundsError, ShapeError

logger = logging.getLogger(__name__)

PSNR_INF = float("inf")
SSIM_TRUNCATE = 3.5


def _check_pair(recon: VolumeGrid, gt: VolumeGrid) -> None:
    if recon.grid != gt.grid:
        raise ShapeError(
            f"volumes differ in layout: {recon.grid.dims} vs {gt.grid.dims}"
        )


def default_range(gt: VolumeGrid, mask: Optional[np.ndarray] = None) -> float:
    values = gt.values if mask is None else gt.values[mask]
    if values.size == 0:
        return 1.0
    span = float(values.max() - values.min())
    return span if span > 0 else 1.0


def psnr(
    recon: VolumeGrid,
    gt: VolumeGrid,
    data_range: Optional[float] = None,
    mask: Optional[np.ndarray] = None,
) -> float:
    """Peak signal-to-noise ratio in dB.

    Args:
        recon (VolumeGrid): Reconstruction.
        gt (VolumeGrid): Ground truth on the same grid.
        data_range (float, optional): Peak value, gt max - min by default.
        mask (np.ndarray, optional): Voxels taking part in the MSE.

    Returns:
        float: PSNR, ``inf`` for identical volumes.
    """
    _check_pair(recon, gt)
    if data_range is None:
        data_range = default_range(gt, mask)
    diff = recon.values.astype(np.float64) - gt.values.astype(np.float64)
    if mask is not None:
        diff = diff[mask]
    mse = float(np.mean(diff * diff)) if diff.size else 0.0
    if mse == 0.0:
        return PSNR_INF
    return float(10.0 * np.log10(data_range**2 / mse))


def ssim_map(
    a: np.ndarray, b: np.ndarray, data_range: float, sigma=1.5, k1=0.01, k2=0.03
) -> np.ndarray:
    """Local SSIM of two 2D images with a Gaussian window."""
    a = a.astype(np.float64)
    b = b.astype(np.float64)

    def blur(img):
        return ndimage.gaussian_filter(
            img, sigma=sigma, truncate=SSIM_TRUNCATE, mode="reflect"
        )

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a * mu_a
    var_b = blur(b * b) - mu_b * mu_b
    cov = blur(a * b) - mu_a * mu_b
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(
    recon: VolumeGrid,
    gt: VolumeGrid,
    config: MetricsConfig = MetricsConfig(),
    mask: Optional[np.ndarray] = None,
) -> float:
    """Mean slice-wise SSIM averaged over z.

    The window border (half the Gaussian support) is cropped from every slice;
    with a mask only masked voxels inside the crop contribute.
    """
    _check_pair(recon, gt)
    data_range = config.data_range or default_range(gt, mask)
    pad = int(SSIM_TRUNCATE * config.ssim_sigma + 0.5)
    scores = []
    for z in range(gt.values.shape[0]):
        smap = ssim_map(
            recon.values[z],
            gt.values[z],
            data_range,
            config.ssim_sigma,
            config.k1,
            config.k2,
        )
        valid = np.zeros(smap.shape, dtype=bool)
        valid[pad : smap.shape[0] - pad, pad : smap.shape[1] - pad] = True
        if mask is not None:
            valid &= mask[z]
        if valid.any():
            scores.append(float(smap[valid].mean()))
    if not scores:
        raise ShapeError("no voxels left for SSIM after cropping the window border")
    return float(np.mean(scores))


def fov_mask(grid: GridSpec, domain: Domain) -> np.ndarray:
    """Boolean (nz, ny, nx) mask of voxel centers inside the FOV box."""
    lo = np.asarray(domain.fov_omega.lo)
    hi = np.asarray(domain.fov_omega.hi)
    xs, ys, zs = grid.axis_coordinates()
    inside = [
        (c >= lo[i] - 1e-9) & (c <= hi[i] + 1e-9) for i, c in enumerate((xs, ys, zs))
    ]
    return inside[2][:, None, None] & inside[1][None, :, None] & inside[0][None, None, :]


def rim_artifact_ratio(volume: VolumeGrid, domain: Domain) -> float:
    """Mean attenuation near the FOV edge over the central mean, minus one.

    The rim is the annulus 0.85 R to 0.97 R of the radius R inscribed in the
    FOV's x-y cross-section; the center is r < 0.5 R. Positive values mean a
    bright rim.
    """
    box = domain.fov_omega
    center = 0.5 * (np.asarray(box.lo) + np.asarray(box.hi))
    radius = 0.5 * min(box.size[0], box.size[1])
    xs, ys, _ = volume.grid.axis_coordinates()
    r = np.hypot(xs[None, :] - center[0], ys[:, None] - center[1])
    rim = (r >= 0.85 * radius) & (r <= 0.97 * radius)
    core = r < 0.5 * radius
    if not rim.any() or not core.any():
        raise ShapeError("grid too coarse to resolve the FOV rim")
    core_mean = float(volume.values[:, core].mean())
    if core_mean == 0.0:
        raise ShapeError("central region has zero mean attenuation")
    return float(volume.values[:, rim].mean()) / core_mean - 1.0


def diff_image(
    recon: VolumeGrid, gt: VolumeGrid, index: int, window: float, axis: int = 0
) -> np.ndarray:
    """Signed difference of one slice mapped to uint8 in [-window, window].

    Args:
        recon (VolumeGrid): Reconstruction.
        gt (VolumeGrid): Ground truth.
        index (int): Slice index along ``axis`` of the (z, y, x) array.
        window (float): Difference mapped to white; -window maps to black.
        axis (int): 0 for z, 1 for y, 2 for x.

    Returns:
        np.ndarray: 8-bit image, mid-gray where the volumes agree.
    """
    _check_pair(recon, gt)
    if window <= 0:
        raise ValueError("window must be positive")
    if not 0 <= axis <= 2 or not 0 <= index < gt.values.shape[axis]:
        raise BoundsError(f"slice {index} along axis {axis} is out of range")
    diff = np.take(recon.values, index, axis=axis) - np.take(
        gt.values, index, axis=axis
    )
    scaled = 127.5 + 127.5 * np.clip(diff / window, -1.0, 1.0)
    return np.rint(scaled).astype(np.uint8)


def decode_diff(image: np.ndarray, window: float) -> np.ndarray:
    """Inverse of the 8-bit mapping, exact to one quantization step."""
    return (image.astype(np.float64) - 127.5) / 127.5 * window


def save_diff_png(path, image: np.ndarray, window: float, index: int) -> None:
    info = PngImagePlugin.PngInfo()
    info.add_text("window", repr(float(window)))
    info.add_text("slice", str(index))
    Image.fromarray(image).save(path, pnginfo=info)
    logger.info("Wrote difference image %s", path)


def load_diff_png(path) -> Tuple[np.ndarray, float]:
    with Image.open(path) as img:
        return np.asarray(img), float(img.text["window"])


def evaluate(
    name: str,
    recon: VolumeGrid,
    gt: VolumeGrid,
    domain: Domain,
    config: MetricsConfig = MetricsConfig(),
) -> MetricsReport:
    """PSNR, SSIM and rim ratio of one reconstruction."""
    mask = fov_mask(gt.grid, domain) if config.restrict_to_fov else None
    try:
        rim = rim_artifact_ratio(recon, domain)
    except ShapeError:
        rim = None
    report = MetricsReport(
        name=name,
        psnr=psnr(recon, gt, config.data_range, mask),
        ssim=ssim(recon, gt, config, mask),
        rim_ratio=rim,
        n_voxels=int(mask.sum()) if mask is not None else gt.grid.n_voxels,
    )
    logger.info("%s: PSNR %.2f dB, SSIM %.4f", name, report.psnr, report.ssim)
    return report


def write_reports(output_dir, reports: Iterable[MetricsReport]) -> Tuple[Path, Path]:
    """Write ``metrics.csv`` and the human-readable ``metrics.txt``."""
    output_dir = Path(output_dir)
    reports = list(reports)
    csv_path = output_dir / "metrics.csv"
    txt_path = output_dir / "metrics.txt"
    fields = list(MetricsReport.model_fields)
    with open(csv_path, "w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        for report in reports:
            writer.writerow(report.model_dump())
    with open(txt_path, "w") as handle:
        for report in reports:
            rim = "n/a" if report.rim_ratio is None else f"{report.rim_ratio:+.3f}"
            handle.write(
                f"{report.name:<24} PSNR {report.psnr:7.2f} dB  "
                f"SSIM {report.ssim:.4f}  rim {rim}  voxels {report.n_voxels}\n"
            )
    return csv_path, txt_path
