"""
This module provides ray generation and ray-box clipping for the circular
cone-beam (and planar fan-beam) acquisition.
"""

from typing import Optional, Tuple

import numpy as np

from hashCT.models.v1.geometry import Box, Ray, ScanGeometry
from hashCT.util.v1.errors import BoundsError


def view_angles(geom: ScanGeometry) -> np.ndarray:
    """Return the uniformly spaced, half-open list of view angles.

    Args:
        geom (ScanGeometry): Acquisition geometry.

    Returns:
        np.ndarray: Angles ``start + i * range / n_views`` in radians.
    """
    step = geom.angle_range / geom.n_views
    return geom.angle_start + np.arange(geom.n_views, dtype=np.float64) * step


def make_rays(
    geom: ScanGeometry, views, rows, cols
) -> Tuple[np.ndarray, np.ndarray]:
    """Build source positions and unit directions for many detector pixels.

    Args:
        geom (ScanGeometry): Acquisition geometry.
        views: View indices (broadcastable integer array).
        rows: Detector row indices.
        cols: Detector column indices.

    Returns:
        tuple: ``(origins, directions)``, both of shape (n, 3), float64.

    Raises:
        BoundsError: If any index lies outside the view or detector range.
    """
    views, rows, cols = np.broadcast_arrays(
        np.atleast_1d(np.asarray(views, dtype=np.int64)),
        np.atleast_1d(np.asarray(rows, dtype=np.int64)),
        np.atleast_1d(np.asarray(cols, dtype=np.int64)),
    )
    for name, idx, limit in (
        ("view", views, geom.n_views),
        ("row", rows, geom.detector_rows),
        ("col", cols, geom.detector_cols),
    ):
        if idx.size and (idx.min() < 0 or idx.max() >= limit):
            raise BoundsError(f"{name} index out of range [0, {limit})")

    phi = view_angles(geom)[views]
    cos_phi, sin_phi = np.cos(phi), np.sin(phi)
    ds, dt = geom.pixel_pitch_mm
    sdd = geom.source_to_detector_mm
    sid = geom.source_to_isocenter_mm

    # pixel-center offsets from the principal point
    off_s = (cols + 0.5) * ds - geom.detector_cols * ds / 2.0
    off_t = (rows + 0.5) * dt - geom.detector_rows * dt / 2.0

    origins = np.stack([sid * cos_phi, sid * sin_phi, np.zeros_like(phi)], axis=-1)
    vec = np.stack(
        [-sdd * cos_phi - off_s * sin_phi, -sdd * sin_phi + off_s * cos_phi, off_t],
        axis=-1,
    )
    norm = np.sqrt(vec[:, 0] ** 2 + vec[:, 1] ** 2 + vec[:, 2] ** 2)
    return origins, vec / norm[:, None]


def make_ray(geom: ScanGeometry, view: int, row: int, col: int) -> Ray:
    """Build the ray from the source at view angle ``view`` to pixel (row, col).

    Args:
        geom (ScanGeometry): Acquisition geometry.
        view (int): View index.
        row (int): Detector row.
        col (int): Detector column.

    Returns:
        Ray: The ray with a unit direction.
    """
    origins, directions = make_rays(geom, view, row, col)
    return Ray(
        origin=tuple(float(v) for v in origins[0]),
        direction=tuple(float(v) for v in directions[0]),
        detector_index=(int(view), int(row), int(col)),
    )


def detector_axis(geom: ScanGeometry, view: int) -> np.ndarray:
    """Unit vector from the source towards the isocenter at a view."""
    phi = view_angles(geom)[view]
    return np.array([-np.cos(phi), -np.sin(phi), 0.0])


def clip_rays_to_box(
    origins: np.ndarray, directions: np.ndarray, box: Box
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab-method intersection of many rays with an axis-aligned box.

    Args:
        origins (np.ndarray): (n, 3) ray origins.
        directions (np.ndarray): (n, 3) unit directions.
        box (Box): The box.

    Returns:
        tuple: ``(t_near, t_far, hit)``; ``t_near`` is clamped to 0 and
        ``hit`` flags rays with ``t_near < t_far``.
    """
    lo = np.asarray(box.lo, dtype=np.float64)
    hi = np.asarray(box.hi, dtype=np.float64)
    parallel = directions == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
        t0 = (lo - origins) * inv
        t1 = (hi - origins) * inv
    t_min = np.minimum(t0, t1)
    t_max = np.maximum(t0, t1)

    inside_slab = (origins >= lo) & (origins <= hi)
    t_min = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), t_min)
    t_max = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), t_max)

    t_near = np.maximum(t_min.max(axis=-1), 0.0)
    t_far = t_max.min(axis=-1)
    hit = t_near < t_far
    return t_near, t_far, hit


def clip_to_box(ray: Ray, box: Box) -> Optional[Tuple[float, float]]:
    """Intersect one ray with a box.

    Args:
        ray (Ray): The ray.
        box (Box): The box.

    Returns:
        tuple | None: ``(t_near, t_far)`` with ``0 <= t_near < t_far`` or
        ``None`` when the ray misses the box ahead of its origin.
    """
    t_near, t_far, hit = clip_rays_to_box(
        np.asarray([ray.origin], dtype=np.float64),
        np.asarray([ray.direction], dtype=np.float64),
        box,
    )
    if not hit[0]:
        return None
    return float(t_near[0]), float(t_far[0])
