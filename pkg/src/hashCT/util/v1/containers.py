"""
This module reads and writes the little-endian sinogram and volume containers.
"""

import logging
from pathlib import Path
from typing import Union

import numpy as np

from hashCT.models.v1.data import GridSpec, Sinogram, VolumeGrid
from hashCT.models.v1.geometry import ScanGeometry, ScanMode
from hashCT.util.v1.errors import ContainerError

logger = logging.getLogger(__name__)

SINOGRAM_MAGIC = b"SINO0001"
VOLUME_MAGIC = b"VOL00001"

SINOGRAM_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("shape", "<u4", (3,)),
        ("sdd", "<f8"),
        ("sid", "<f8"),
        ("pitch", "<f8", (2,)),
        ("angle_start", "<f8"),
        ("angle_range", "<f8"),
        ("mode", "<u4"),
    ]
)
VOLUME_HEADER = np.dtype(
    [
        ("magic", "S8"),
        ("dims", "<u4", (3,)),
        ("pitch", "<f8", (3,)),
        ("origin", "<f8", (3,)),
    ]
)
_MODES = [ScanMode.CONE3D, ScanMode.FAN2D]

PathLike = Union[str, Path]


def read_header(handle, dtype: np.dtype, magic: bytes):
    """Read one structured header and check its magic.

    Raises:
        ContainerError: If the file is truncated or of another kind.
    """
    header = np.fromfile(handle, dtype=dtype, count=1)
    if header.size != 1:
        raise ContainerError("file is too short for its header")
    if header["magic"][0] != magic:
        raise ContainerError(
            f"bad magic {header['magic'][0]!r}, expected {magic.decode()}"
        )
    return header[0]


def read_payload(handle, count: int, dtype: str = "<f4") -> np.ndarray:
    payload = np.fromfile(handle, dtype=dtype, count=count)
    if payload.size != count:
        raise ContainerError(f"payload holds {payload.size} values, expected {count}")
    return payload


def save_sinogram(path: PathLike, sinogram: Sinogram) -> None:
    geom = sinogram.geometry
    header = np.zeros(1, dtype=SINOGRAM_HEADER)
    header["magic"] = SINOGRAM_MAGIC
    header["shape"] = sinogram.values.shape
    header["sdd"] = geom.source_to_detector_mm
    header["sid"] = geom.source_to_isocenter_mm
    header["pitch"] = geom.pixel_pitch_mm
    header["angle_start"] = geom.angle_start
    header["angle_range"] = geom.angle_range
    header["mode"] = _MODES.index(geom.mode)
    with open(path, "wb") as handle:
        header.tofile(handle)
        np.ascontiguousarray(sinogram.values, dtype="<f4").tofile(handle)
    logger.info("Wrote sinogram %s to %s", sinogram.values.shape, path)


def load_sinogram(path: PathLike) -> Sinogram:
    with open(path, "rb") as handle:
        header = read_header(handle, SINOGRAM_HEADER, SINOGRAM_MAGIC)
        views, rows, cols = (int(v) for v in header["shape"])
        values = read_payload(handle, views * rows * cols)
    if int(header["mode"]) >= len(_MODES):
        raise ContainerError(f"unknown scan mode {int(header['mode'])}")
    geometry = ScanGeometry(
        source_to_detector_mm=float(header["sdd"]),
        source_to_isocenter_mm=float(header["sid"]),
        detector_rows=rows,
        detector_cols=cols,
        pixel_pitch_mm=tuple(float(p) for p in header["pitch"]),
        n_views=views,
        angle_start=float(header["angle_start"]),
        angle_range=float(header["angle_range"]),
        mode=_MODES[int(header["mode"])],
    )
    return Sinogram(
        geometry=geometry, values=values.reshape(views, rows, cols).astype(np.float64)
    )


def save_volume(path: PathLike, volume: VolumeGrid) -> None:
    grid = volume.grid
    header = np.zeros(1, dtype=VOLUME_HEADER)
    header["magic"] = VOLUME_MAGIC
    header["dims"] = grid.dims
    header["pitch"] = grid.pitch
    header["origin"] = grid.origin
    with open(path, "wb") as handle:
        header.tofile(handle)
        np.ascontiguousarray(volume.values, dtype="<f4").tofile(handle)
    logger.info("Wrote volume %s to %s", grid.dims, path)


def load_volume(path: PathLike) -> VolumeGrid:
    with open(path, "rb") as handle:
        header = read_header(handle, VOLUME_HEADER, VOLUME_MAGIC)
        grid = GridSpec(
            dims=tuple(int(d) for d in header["dims"]),
            pitch=tuple(float(p) for p in header["pitch"]),
            origin=tuple(float(o) for o in header["origin"]),
        )
        values = read_payload(handle, grid.n_voxels)
    return VolumeGrid(grid=grid, values=values.reshape(grid.shape).astype(np.float64))
