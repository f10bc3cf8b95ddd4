"""
This module contains the Pydantic model configuring the multi-resolution hash
encoding.
"""

import math

from pydantic import BaseModel, ConfigDict, model_validator


class EncoderConfig(BaseModel):
    """
    Multi-resolution hash encoding parameters.

    Attributes:
        n_levels (int): Number of resolution levels L.
        n_min (int): Coarsest grid resolution N_min.
        n_max (int): Finest grid resolution N_max.
        table_size (int): Rows T per hash table, a power of two.
        feature_dim (int): Feature width F per level.
        restricted_levels (int): Levels m used by the restricted encoder.
    """

    model_config = ConfigDict(frozen=True)

    n_levels: int = 16
    n_min: int = 16
    n_max: int = 1400
    table_size: int = 2**19
    feature_dim: int = 2
    restricted_levels: int = 4

    @model_validator(mode="after")
    def _check(self):
        errors = []
        if self.n_levels < 2:
            errors.append("n_levels must be at least 2")
        if not 1 <= self.n_min <= self.n_max:
            errors.append("resolutions require 1 <= n_min <= n_max")
        if self.table_size < 1 or self.table_size & (self.table_size - 1):
            errors.append("table_size must be a power of two")
        if self.feature_dim < 1:
            errors.append("feature_dim must be at least 1")
        if not 1 <= self.restricted_levels <= self.n_levels:
            errors.append("restricted_levels must lie in [1, n_levels]")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    @property
    def growth_factor(self) -> float:
        return math.exp(
            (math.log(self.n_max) - math.log(self.n_min)) / (self.n_levels - 1)
        )

    @property
    def output_dim(self) -> int:
        return self.n_levels * self.feature_dim
