"""
This module contains Pydantic models for the array data flowing through the
engine: sinograms, voxel grid specifications and reconstructed volumes.
"""

from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from hashCT.models.v1.geometry import Box, ScanGeometry, Vec3


class Sinogram(BaseModel):
    """
    Stack of projections P(view, row, col) with its acquisition geometry.

    Attributes:
        geometry (ScanGeometry): Geometry the projections were acquired with.
        values (np.ndarray): Line integrals, shape (views, rows, cols).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    geometry: ScanGeometry
    values: np.ndarray

    @model_validator(mode="after")
    def _check_shape(self):
        geom = self.geometry
        expected = (geom.n_views, geom.detector_rows, geom.detector_cols)
        if self.values.shape != expected:
            raise ValueError(
                f"sinogram shape {self.values.shape} does not match geometry {expected}"
            )
        return self

    def subsample_views(self, stride: int) -> "Sinogram":
        """Keep every ``stride``-th view; spacing stays uniform.

        Args:
            stride (int): View stride, must divide the number of views.

        Returns:
            Sinogram: The sparse-view sinogram.
        """
        if stride < 1 or self.geometry.n_views % stride:
            raise ValueError(
                f"view stride {stride} must divide n_views={self.geometry.n_views}"
            )
        if stride == 1:
            return self
        geometry = self.geometry.model_copy(
            update={"n_views": self.geometry.n_views // stride}
        )
        return Sinogram(geometry=geometry, values=self.values[::stride].copy())


class GridSpec(BaseModel):
    """
    Regular voxel grid.

    Attributes:
        dims (tuple): Voxel counts (nx, ny, nz).
        pitch (Vec3): Voxel pitch in mm.
        origin (Vec3): Center of voxel (0, 0, 0) in mm.
    """

    model_config = ConfigDict(frozen=True)

    dims: Tuple[int, int, int]
    pitch: Vec3
    origin: Vec3

    @field_validator("dims")
    @classmethod
    def _non_empty(cls, value):
        if min(value) < 1:
            raise ValueError("grid must contain at least one voxel per axis")
        return value

    @field_validator("pitch")
    @classmethod
    def _positive_pitch(cls, value):
        if min(value) <= 0:
            raise ValueError("voxel pitch must be positive")
        return value

    @classmethod
    def for_box(cls, box: Box, pitch_mm: float, dim: int = 3) -> "GridSpec":
        """Cover a box with cubic voxels; planar grids get a single z=0 slice.

        Args:
            box (Box): Region to cover.
            pitch_mm (float): Voxel pitch.
            dim (int): 2 for a single-slice grid.

        Returns:
            GridSpec: Grid whose extent matches the box within half a voxel.
        """
        size = np.asarray(box.size)
        lo = np.asarray(box.lo)
        dims = np.maximum(np.rint(size / pitch_mm).astype(int), 1)
        pitch = size / dims
        origin = lo + pitch / 2.0
        if dim == 2:
            dims[2] = 1
            pitch[2] = pitch_mm
            origin[2] = 0.0
        return cls(
            dims=tuple(int(d) for d in dims),
            pitch=tuple(float(p) for p in pitch),
            origin=tuple(float(o) for o in origin),
        )

    @property
    def shape(self) -> Tuple[int, int, int]:
        nx, ny, nz = self.dims
        return nz, ny, nx

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.dims))

    def axis_coordinates(self):
        return tuple(
            o + p * np.arange(n, dtype=np.float64)
            for n, p, o in zip(self.dims, self.pitch, self.origin)
        )

    def voxel_centers(self) -> np.ndarray:
        """Voxel centers as an (n, 3) array in z-slowest order."""
        xs, ys, zs = self.axis_coordinates()
        zz, yy, xx = np.meshgrid(zs, ys, xs, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=-1)

    def bounds(self) -> Box:
        lo = np.asarray(self.origin) - np.asarray(self.pitch) / 2.0
        hi = lo + np.asarray(self.pitch) * np.asarray(self.dims)
        return Box(lo=tuple(lo.tolist()), hi=tuple(hi.tolist()))


class VolumeGrid(BaseModel):
    """
    Voxel volume with physical metadata.

    Attributes:
        grid (GridSpec): Voxel layout.
        values (np.ndarray): Attenuation in 1/mm, shape (nz, ny, nx).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: GridSpec
    values: np.ndarray

    @model_validator(mode="after")
    def _check_values(self):
        if self.values.shape != self.grid.shape:
            raise ValueError(
                f"volume shape {self.values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("volume values must be finite")
        return self
