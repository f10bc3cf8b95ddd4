"""
This module contains Pydantic models describing the acquisition geometry,
the reconstruction domains and single rays.
"""

import math
from enum import Enum
from typing import Tuple

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

Vec3 = Tuple[float, float, float]


class ScanMode(str, Enum):
    """Enum representing the acquisition mode."""

    CONE3D = "cone3d"
    FAN2D = "fan2d"


class Box(BaseModel):
    """
    Axis-aligned box in millimetres.

    Attributes:
        lo (Vec3): Lower corner.
        hi (Vec3): Upper corner.
    """

    model_config = ConfigDict(frozen=True)

    lo: Vec3
    hi: Vec3

    @model_validator(mode="after")
    def _check_extent(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box lo={self.lo} hi={self.hi}")
        return self

    @classmethod
    def centered(cls, size_mm) -> "Box":
        """Build a box centered on the rotation axis.

        Args:
            size_mm: Two or three edge lengths. With two lengths the box is
                planar and gets a unit z-extent around the mid-plane.

        Returns:
            Box: The centered box.
        """
        size = [float(s) for s in size_mm]
        if len(size) == 2:
            size.append(1.0)
        if len(size) != 3:
            raise ValueError("box size needs two or three edge lengths")
        half = [s / 2.0 for s in size]
        return cls(lo=tuple(-h for h in half), hi=tuple(half))

    @property
    def size(self) -> Vec3:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def contains_box(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )


class Domain(BaseModel):
    """
    Truncated field of view and the extended reconstruction domain.

    Attributes:
        fov_omega (Box): Region fully covered by the detector from all angles.
        fov_extended (Box): Enlarged domain enclosing the whole object.
    """

    model_config = ConfigDict(frozen=True)

    fov_omega: Box
    fov_extended: Box

    @model_validator(mode="before")
    @classmethod
    def _from_sizes(cls, data):
        if isinstance(data, dict) and "fov_mm" in data:
            data = dict(data)
            data["fov_omega"] = Box.centered(data.pop("fov_mm"))
            data["fov_extended"] = Box.centered(data.pop("extended_mm"))
        return data

    @model_validator(mode="after")
    def _check_nesting(self):
        if not self.fov_extended.contains_box(self.fov_omega):
            raise ValueError("the FOV box must lie inside the extended FOV box")
        return self


class ScanGeometry(BaseModel):
    """
    Circular cone-beam acquisition with a flat detector.

    The source sits at ``SID * (cos(phi), sin(phi), 0)``; the detector plane is
    orthogonal to the source-isocenter line at distance SDD from the source.

    Attributes:
        source_to_detector_mm (float): Source-to-detector distance (SDD).
        source_to_isocenter_mm (float): Source-to-isocenter distance (SID).
        detector_rows (int): Number of detector rows.
        detector_cols (int): Number of detector columns.
        pixel_pitch_mm (tuple): Column and row pitch (ds, dt).
        n_views (int): Number of projection views.
        angle_start (float): Start of the angular range in radians.
        angle_range (float): Length of the half-open angular range in radians.
        mode (ScanMode): Cone-beam or planar fan-beam acquisition.
    """

    model_config = ConfigDict(frozen=True)

    source_to_detector_mm: float = 600.0
    source_to_isocenter_mm: float = 400.0
    detector_rows: int = 640
    detector_cols: int = 640
    pixel_pitch_mm: Tuple[float, float] = (0.2, 0.2)
    n_views: int = 300
    angle_start: float = 0.0
    angle_range: float = 2.0 * math.pi
    mode: ScanMode = ScanMode.CONE3D

    @field_validator("detector_rows", "detector_cols", "n_views")
    @classmethod
    def _positive_count(cls, value):
        if value < 1:
            raise ValueError("counts must be at least 1")
        return value

    @field_validator("pixel_pitch_mm")
    @classmethod
    def _positive_pitch(cls, value):
        if min(value) <= 0:
            raise ValueError("pixel pitch must be positive")
        return value

    @model_validator(mode="after")
    def _check_distances(self):
        if not 0 < self.source_to_isocenter_mm < self.source_to_detector_mm:
            raise ValueError("geometry requires 0 < SID < SDD")
        if self.mode == ScanMode.FAN2D and self.detector_rows != 1:
            raise ValueError("fan2d mode requires detector_rows = 1")
        if self.angle_range <= 0:
            raise ValueError("angle_range must be positive")
        return self

    @property
    def dim(self) -> int:
        return 2 if self.mode == ScanMode.FAN2D else 3

    @property
    def n_rays(self) -> int:
        return self.n_views * self.detector_rows * self.detector_cols

    @property
    def magnification(self) -> float:
        return self.source_to_detector_mm / self.source_to_isocenter_mm


class Ray(BaseModel):
    """
    A single cone-beam ray.

    Attributes:
        origin (Vec3): Source position in mm.
        direction (Vec3): Unit direction towards the detector pixel.
        detector_index (tuple): (view, row, col) of the detector pixel.
    """

    model_config = ConfigDict(frozen=True)

    origin: Vec3
    direction: Vec3
    detector_index: Tuple[int, int, int]
