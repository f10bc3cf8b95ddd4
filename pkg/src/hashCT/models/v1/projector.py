"""
This module contains the Pydantic model of the two-zone ray sampling plan.
"""

from pydantic import BaseModel, ConfigDict, model_validator


class SamplingPlan(BaseModel):
    """
    Sampling distances along a ray inside the FOV and in the outer domain.

    Attributes:
        step_inside (float): Arc-length step inside the FOV in mm.
        step_outside (float): Arc-length step in the outer domain in mm.
        jitter (bool): Shift each ray's sample grid by a uniform offset.
    """

    model_config = ConfigDict(frozen=True)

    step_inside: float = 0.2
    step_outside: float = 2.0
    jitter: bool = False

    @model_validator(mode="after")
    def _check_steps(self):
        if not 0 < self.step_inside <= self.step_outside:
            raise ValueError("sampling requires 0 < step_inside <= step_outside")
        return self
