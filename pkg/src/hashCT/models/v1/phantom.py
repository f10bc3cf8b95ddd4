"""
This module contains Pydantic models for analytic ellipsoid phantoms.
"""

from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy.spatial.transform import Rotation

from hashCT.models.v1.geometry import Box, Vec3

Mat3 = Tuple[Vec3, Vec3, Vec3]
IDENTITY: Mat3 = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))


class Ellipsoid(BaseModel):
    """
    Constant-attenuation ellipsoid added to the phantom.

    The columns of ``rotation`` are the ellipsoid's local axes in world
    coordinates.

    Attributes:
        center (Vec3): Center in mm.
        semi_axes (Vec3): Semi-axes (a, b, c) in mm.
        rotation (Mat3): Orthonormal 3x3 matrix.
        delta_mu (float): Signed additive attenuation in 1/mm.
    """

    model_config = ConfigDict(frozen=True)

    center: Vec3
    semi_axes: Vec3
    rotation: Mat3 = IDENTITY
    delta_mu: float

    @field_validator("semi_axes")
    @classmethod
    def _positive_axes(cls, value):
        if min(value) <= 0:
            raise ValueError("semi-axes must be strictly positive")
        return value

    @field_validator("rotation")
    @classmethod
    def _orthonormal(cls, value):
        rot = np.asarray(value, dtype=np.float64)
        if not np.allclose(rot.T @ rot, np.eye(3), rtol=0.0, atol=1e-10):
            raise ValueError("rotation must be orthonormal")
        return value

    @classmethod
    def from_euler(
        cls, center, semi_axes, euler_deg, delta_mu: float
    ) -> "Ellipsoid":
        """Build an ellipsoid from extrinsic z-y-x Euler angles in degrees."""
        matrix = Rotation.from_euler("zyx", list(euler_deg), degrees=True).as_matrix()
        return cls(
            center=tuple(float(v) for v in center),
            semi_axes=tuple(float(v) for v in semi_axes),
            rotation=tuple(tuple(float(v) for v in row) for row in matrix),
            delta_mu=float(delta_mu),
        )

    def bounding_half_extent(self) -> np.ndarray:
        rot = np.asarray(self.rotation)
        axes = np.asarray(self.semi_axes)
        return np.sqrt(((rot * axes[None, :]) ** 2).sum(axis=1))


class Phantom(BaseModel):
    """
    Union of additive ellipsoids.

    With ``dim = 2`` every ellipsoid is an ellipse in the z = 0 plane with
    infinite extent along z: the z-term of the quadric is dropped.

    Attributes:
        ellipsoids (List[Ellipsoid]): Ordered list of ellipsoids.
        dim (int): 2 for planar phantoms, 3 otherwise.
        support_box (Box): Bounding box of all ellipsoids.
    """

    model_config = ConfigDict(frozen=True)

    ellipsoids: List[Ellipsoid] = []
    dim: Literal[2, 3] = 3
    support_box: Optional[Box] = None

    @model_validator(mode="after")
    def _check_support(self):
        if self.dim == 2:
            for ellipsoid in self.ellipsoids:
                if abs(ellipsoid.rotation[2][2] - 1.0) > 1e-10:
                    raise ValueError("planar phantoms only rotate about the z-axis")
        needed = self.bounding_box()
        if self.support_box is None:
            object.__setattr__(self, "support_box", needed)
        elif not self.support_box.contains_box(needed):
            raise ValueError("support_box must contain every ellipsoid")
        return self

    def bounding_box(self) -> Box:
        if not self.ellipsoids:
            return Box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5))
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for ellipsoid in self.ellipsoids:
            center = np.asarray(ellipsoid.center)
            half = ellipsoid.bounding_half_extent()
            lo = np.minimum(lo, center - half)
            hi = np.maximum(hi, center + half)
        if self.dim == 2:
            lo[2], hi[2] = -0.5, 0.5
        return Box(lo=tuple(lo.tolist()), hi=tuple(hi.tolist()))


class PhantomConfig(BaseModel):
    """
    Phantom selection for a run.

    Attributes:
        name (str | None): Built-in phantom key.
        path (str | None): Phantom definition file.
        scale_mm (float): Physical half-width of the built-in phantom.
        mu_scale (float): Multiplier on built-in attenuation values.
        supersample (int): Sub-samples per axis when rasterizing ground truth.
    """

    model_config = ConfigDict(frozen=True)

    name: Optional[str] = None
    path: Optional[str] = None
    scale_mm: float = 60.0
    mu_scale: float = 1.0
    supersample: int = 1

    @field_validator("supersample")
    @classmethod
    def _positive_supersample(cls, value):
        if value < 1:
            raise ValueError("supersample must be at least 1")
        return value
