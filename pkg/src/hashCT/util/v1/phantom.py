"""
This module provides analytic ellipsoid phantoms: point evaluation, exact line
integrals, noiseless sinogram synthesis and ground-truth rasterization.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import List, Tuple

import numpy as np

from hashCT.models.v1.data import GridSpec, Sinogram, VolumeGrid
from hashCT.models.v1.geometry import Ray, ScanGeometry
from hashCT.models.v1.phantom import Ellipsoid, Phantom, PhantomConfig
from hashCT.util.v1.errors import ConfigError, ShapeError
from hashCT.util.v1.geometry import make_rays

logger = logging.getLogger(__name__)

# (cx, cy, cz, a, b, c, angle_z_deg, delta_mu) in units of the phantom
# half-width; delta_mu in 1/mm before mu_scale.
BUILTIN_PHANTOMS = {
    "empty": [],
    "disk": [
        (0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.02),
    ],
    "shepp_logan": [
        (0.0, 0.0, 0.0, 0.69, 0.92, 0.81, 0.0, 0.05),
        (0.0, -0.0184, 0.0, 0.6624, 0.874, 0.78, 0.0, -0.04),
        (0.22, 0.0, 0.0, 0.11, 0.31, 0.22, -18.0, -0.01),
        (-0.22, 0.0, 0.0, 0.16, 0.41, 0.28, 18.0, -0.01),
        (0.0, 0.35, -0.15, 0.21, 0.25, 0.41, 0.0, 0.005),
        (0.0, 0.1, 0.25, 0.046, 0.046, 0.05, 0.0, 0.005),
        (0.0, -0.1, 0.25, 0.046, 0.046, 0.05, 0.0, 0.005),
        (-0.08, -0.605, 0.0, 0.046, 0.023, 0.05, 0.0, 0.005),
        (0.0, -0.606, 0.0, 0.023, 0.023, 0.02, 0.0, 0.005),
        (0.06, -0.605, 0.0, 0.023, 0.046, 0.02, 0.0, 0.005),
    ],
    # simplified FORBILD-like head: skull shell, brain, ear inserts, sinuses
    "forbild_head": [
        (0.0, 0.0, 0.0, 0.80, 1.00, 0.85, 0.0, 0.045),
        (0.0, 0.0, 0.0, 0.74, 0.94, 0.79, 0.0, -0.025),
        (-0.62, 0.05, 0.0, 0.05, 0.05, 0.05, 0.0, 0.030),
        (0.62, 0.05, 0.0, 0.05, 0.05, 0.05, 0.0, 0.030),
        (0.0, 0.80, 0.10, 0.12, 0.06, 0.08, 0.0, -0.018),
        (-0.15, 0.62, -0.10, 0.07, 0.05, 0.06, 0.0, -0.018),
        (0.15, 0.62, -0.10, 0.07, 0.05, 0.06, 0.0, -0.018),
        (-0.12, 0.10, 0.20, 0.06, 0.20, 0.10, 15.0, -0.002),
        (0.12, 0.10, 0.20, 0.06, 0.20, 0.10, -15.0, -0.002),
        (0.0, -0.40, 0.0, 0.08, 0.08, 0.08, 0.0, 0.002),
    ],
}


def builtin_phantom(
    name: str, scale_mm: float = 60.0, mu_scale: float = 1.0, dim: int = 3
) -> Phantom:
    """Instantiate a named built-in phantom in physical units.

    Args:
        name (str): One of ``BUILTIN_PHANTOMS``.
        scale_mm (float): Physical half-width of the phantom.
        mu_scale (float): Multiplier applied to every attenuation.
        dim (int): 2 for a planar phantom (z-centers dropped).

    Returns:
        Phantom: The phantom.

    Raises:
        ConfigError: Unknown phantom name.
    """
    if name not in BUILTIN_PHANTOMS:
        raise ConfigError(
            f"unknown phantom '{name}', choose from {sorted(BUILTIN_PHANTOMS)}"
        )
    ellipsoids = []
    for cx, cy, cz, a, b, c, angle, delta in BUILTIN_PHANTOMS[name]:
        center = (cx * scale_mm, cy * scale_mm, 0.0 if dim == 2 else cz * scale_mm)
        ellipsoids.append(
            Ellipsoid.from_euler(
                center,
                (a * scale_mm, b * scale_mm, c * scale_mm),
                (angle, 0.0, 0.0),
                delta * mu_scale,
            )
        )
    return Phantom(ellipsoids=ellipsoids, dim=dim)


def load_phantom_file(path: str, dim: int = 3) -> Phantom:
    """Read a phantom definition file.

    One record per line: ``cx cy cz a b c phi theta psi delta_mu`` with
    lengths in mm and extrinsic z-y-x Euler angles in degrees. Lines starting
    with ``#`` are comments.

    Args:
        path (str): File path.
        dim (int): Phantom dimension.

    Returns:
        Phantom: The phantom.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"phantom file '{path}' does not exist")
    records = np.loadtxt(path, comments="#", ndmin=2)
    if records.size and records.shape[1] != 10:
        raise ConfigError(f"phantom file '{path}' needs 10 columns per record")
    ellipsoids = [
        Ellipsoid.from_euler(row[0:3], row[3:6], row[6:9], row[9]) for row in records
    ]
    return Phantom(ellipsoids=ellipsoids, dim=dim)


def build_phantom(config: PhantomConfig, dim: int) -> Phantom:
    """Resolve a phantom configuration to a validated phantom."""
    if config.path:
        phantom = load_phantom_file(config.path, dim=dim)
    elif config.name:
        phantom = builtin_phantom(config.name, config.scale_mm, config.mu_scale, dim)
    else:
        raise ConfigError("a phantom needs either a name or a path")
    check_nonnegative(phantom)
    return phantom


def _to_local(vectors: np.ndarray, rotation: np.ndarray) -> np.ndarray:
    # elementwise form of vectors @ rotation, independent of batch size
    return (
        vectors[:, 0:1] * rotation[0]
        + vectors[:, 1:2] * rotation[1]
        + vectors[:, 2:3] * rotation[2]
    )


def _inverse_axes(ellipsoid: Ellipsoid, dim: int) -> np.ndarray:
    inv = 1.0 / np.asarray(ellipsoid.semi_axes, dtype=np.float64)
    if dim == 2:
        inv[2] = 0.0
    return inv


def mu_at(phantom: Phantom, points) -> np.ndarray:
    """Attenuation at one or many points; boundaries count as inside.

    Args:
        phantom (Phantom): The phantom.
        points: A point (3,) or an array of points (n, 3) in mm.

    Returns:
        np.ndarray: Attenuation in 1/mm, shape (n,).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    mu = np.zeros(pts.shape[0], dtype=np.float64)
    for ellipsoid in phantom.ellipsoids:
        rel = pts - np.asarray(ellipsoid.center)
        if phantom.dim == 2:
            rel[:, 2] = 0.0
        local = _to_local(rel, np.asarray(ellipsoid.rotation)) * _inverse_axes(
            ellipsoid, phantom.dim
        )
        inside = (local**2).sum(axis=-1) <= 1.0
        mu[inside] += ellipsoid.delta_mu
    return mu


def chord_lengths(
    ellipsoid: Ellipsoid, origins: np.ndarray, directions: np.ndarray, dim: int = 3
) -> np.ndarray:
    """Length of each ray's intersection with one ellipsoid (t >= 0 only)."""
    rotation = np.asarray(ellipsoid.rotation)
    inv_axes = _inverse_axes(ellipsoid, dim)
    rel = origins - np.asarray(ellipsoid.center)
    if dim == 2:
        rel[:, 2] = 0.0

    # expand around the point of closest approach to limit cancellation
    t0 = -(
        rel[:, 0] * directions[:, 0]
        + rel[:, 1] * directions[:, 1]
        + rel[:, 2] * directions[:, 2]
    )
    closest = rel + t0[:, None] * directions
    o = _to_local(closest, rotation) * inv_axes
    d = _to_local(directions, rotation) * inv_axes

    qa = (d**2).sum(axis=-1)
    qb = 2.0 * (o * d).sum(axis=-1)
    qc = (o**2).sum(axis=-1) - 1.0
    disc = qb**2 - 4.0 * qa * qc
    hit = (qa > 0.0) & (disc > 0.0)

    chord = np.zeros(origins.shape[0], dtype=np.float64)
    if np.any(hit):
        root = np.sqrt(disc[hit])
        t_in = t0[hit] + (-qb[hit] - root) / (2.0 * qa[hit])
        t_out = t0[hit] + (-qb[hit] + root) / (2.0 * qa[hit])
        chord[hit] = np.maximum(t_out - np.maximum(t_in, 0.0), 0.0)
    return chord


def project_rays(
    phantom: Phantom, origins: np.ndarray, directions: np.ndarray
) -> np.ndarray:
    """Exact line integrals of the phantom along many rays."""
    total = np.zeros(origins.shape[0], dtype=np.float64)
    for ellipsoid in phantom.ellipsoids:
        total += ellipsoid.delta_mu * chord_lengths(
            ellipsoid, origins, directions, phantom.dim
        )
    return total


def analytic_projection(phantom: Phantom, ray: Ray) -> float:
    """Exact line integral of the phantom along one ray.

    Args:
        phantom (Phantom): The phantom.
        ray (Ray): Ray with a unit direction.

    Returns:
        float: Sum over ellipsoids of ``delta_mu * chord_length``.
    """
    origins = np.asarray([ray.origin], dtype=np.float64)
    directions = np.asarray([ray.direction], dtype=np.float64)
    return float(project_rays(phantom, origins, directions)[0])


def _view_chunks(n_views: int, workers: int) -> List[Tuple[int, int]]:
    n_chunks = max(1, min(n_views, 4 * workers))
    bounds = np.linspace(0, n_views, n_chunks + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate_sinogram(
    phantom: Phantom, geom: ScanGeometry, workers: int = 1
) -> Sinogram:
    """Forward project the phantom for every detector pixel, without noise.

    Args:
        phantom (Phantom): The phantom.
        geom (ScanGeometry): Acquisition geometry.
        workers (int): Number of threads; chunks write disjoint views.

    Returns:
        Sinogram: The noiseless sinogram in float64.
    """
    values = np.zeros(
        (geom.n_views, geom.detector_rows, geom.detector_cols), dtype=np.float64
    )
    rows, cols = np.meshgrid(
        np.arange(geom.detector_rows), np.arange(geom.detector_cols), indexing="ij"
    )

    def _project(chunk):
        start, stop = chunk
        for view in range(start, stop):
            origins, directions = make_rays(geom, view, rows.ravel(), cols.ravel())
            values[view] = project_rays(phantom, origins, directions).reshape(
                rows.shape
            )

    chunks = _view_chunks(geom.n_views, workers)
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        list(pool.map(_project, chunks))
    logger.info(
        "Simulated sinogram with %d views of %dx%d pixels",
        geom.n_views,
        geom.detector_rows,
        geom.detector_cols,
    )
    return Sinogram(geometry=geom, values=values)


def rasterize(phantom: Phantom, grid: GridSpec, supersample: int = 1) -> VolumeGrid:
    """Sample the phantom at voxel centers, optionally averaging sub-samples.

    Args:
        phantom (Phantom): The phantom.
        grid (GridSpec): Voxel layout.
        supersample (int): Sub-samples per axis; z is only supersampled for
            3D phantoms.

    Returns:
        VolumeGrid: Ground-truth volume.
    """
    if grid.n_voxels == 0:
        raise ShapeError("cannot rasterize an empty grid")
    k = int(supersample)
    frac = (np.arange(k) + 0.5) / k - 0.5
    z_frac = frac if phantom.dim == 3 else np.zeros(1)
    offsets = np.stack(
        np.meshgrid(frac, frac, z_frac, indexing="ij"), axis=-1
    ).reshape(-1, 3) * np.asarray(grid.pitch)

    nz, ny, nx = grid.shape
    values = np.zeros(grid.shape, dtype=np.float64)
    xs, ys, zs = grid.axis_coordinates()
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    for iz in range(nz):
        plane = np.stack(
            [xx.ravel(), yy.ravel(), np.full(xx.size, zs[iz])], axis=-1
        )
        acc = np.zeros(plane.shape[0], dtype=np.float64)
        for offset in offsets:
            acc += mu_at(phantom, plane + offset)
        values[iz] = (acc / offsets.shape[0]).reshape(ny, nx)
    return VolumeGrid(grid=grid, values=values)


def check_nonnegative(
    phantom: Phantom, n_points: int = 100_000, seed: int = 0
) -> None:
    """Sample random points in the support box and reject negative attenuation.

    Raises:
        ConfigError: If any sampled point has negative attenuation.
    """
    if not phantom.ellipsoids:
        return
    rng = np.random.default_rng(seed)
    box = phantom.support_box
    points = rng.uniform(box.lo, box.hi, size=(n_points, 3))
    centers = np.asarray([e.center for e in phantom.ellipsoids])
    points = np.concatenate([points, centers])
    mu = mu_at(phantom, points)
    if mu.min() < -1e-12:
        raise ConfigError(
            "phantom has negative attenuation; negative ellipsoids must be nested"
        )
