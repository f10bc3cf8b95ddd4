"""
This module contains Pydantic models for the analytic FDK baseline.
"""

from enum import Enum

from pydantic import BaseModel, ConfigDict, field_validator


class FilterWindow(str, Enum):
    """Enum representing the apodization applied to the ramp."""

    NONE = "none"
    COSINE = "cosine"


class FilterSpec(BaseModel):
    """
    Ram-Lak ramp filter applied along detector rows in the frequency domain.

    Attributes:
        kind (str): Filter family, only ``ramp``.
        window (FilterWindow): Optional apodization.
        padding (int): Zero-padding factor, a power of two of at least 2.
    """

    model_config = ConfigDict(frozen=True)

    kind: str = "ramp"
    window: FilterWindow = FilterWindow.NONE
    padding: int = 2

    @field_validator("kind")
    @classmethod
    def _ramp_only(cls, value):
        if value != "ramp":
            raise ValueError("only the ramp filter is available")
        return value

    @field_validator("padding")
    @classmethod
    def _power_of_two(cls, value):
        if value < 2 or value & (value - 1):
            raise ValueError("padding must be a power of two >= 2")
        return value


class BaselineConfig(BaseModel):
    """
    FDK baseline settings.

    Attributes:
        filter (FilterSpec): Ramp filter.
        extrapolate (bool): Extend truncated rows before filtering.
        margin_frac (float): Extension per side as a fraction of the detector width.
        edge_tolerance (float): Edge values above this count as truncated.
        pitch_mm (float): Voxel pitch of the reconstruction grid.
    """

    model_config = ConfigDict(frozen=True)

    filter: FilterSpec = FilterSpec()
    extrapolate: bool = False
    margin_frac: float = 0.25
    edge_tolerance: float = 1e-6
    pitch_mm: float = 0.5

    @field_validator("margin_frac", "pitch_mm")
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value
