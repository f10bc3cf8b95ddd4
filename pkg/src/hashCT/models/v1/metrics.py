"""
This module contains Pydantic models for image-quality evaluation.
"""

from typing import List, Optional

from pydantic import BaseModel, ConfigDict, field_validator


class MetricsConfig(BaseModel):
    """
    Evaluation parameters.

    Attributes:
        data_range (float | None): PSNR/SSIM range, ground-truth max - min if unset.
        ssim_sigma (float): Gaussian window standard deviation in voxels.
        k1 (float): SSIM luminance constant.
        k2 (float): SSIM contrast constant.
        restrict_to_fov (bool): Exclude voxels outside the FOV.
        diff_window (float): Symmetric difference window in 1/mm.
        diff_slices (List[int]): z indices exported as difference images,
            the central slice if empty.
    """

    model_config = ConfigDict(frozen=True)

    data_range: Optional[float] = None
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    restrict_to_fov: bool = True
    diff_window: float = 0.005
    diff_slices: List[int] = []

    @field_validator("ssim_sigma", "diff_window")
    @classmethod
    def _positive(cls, value):
        if value <= 0:
            raise ValueError("must be positive")
        return value

    @field_validator("data_range")
    @classmethod
    def _positive_range(cls, value):
        if value is not None and value <= 0:
            raise ValueError("data_range must be positive")
        return value


class MetricsReport(BaseModel):
    """Scores of one reconstruction against ground truth."""

    name: str
    psnr: float
    ssim: float
    rim_ratio: Optional[float] = None
    n_voxels: int
