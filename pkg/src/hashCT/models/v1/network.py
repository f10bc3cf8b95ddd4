"""
This module contains the Pydantic model configuring the field network.
"""

from pydantic import BaseModel, ConfigDict, field_validator


class MLPConfig(BaseModel):
    """
    Fully connected field network: ReLU hidden layers and a scaled sigmoid
    output.

    Attributes:
        input_dim (int): Encoding width L*F.
        hidden_layers (int): Number of hidden layers.
        hidden_width (int): Width of every hidden layer.
        mu_max (float): Output scale in 1/mm; outputs lie in (0, mu_max).
    """

    model_config = ConfigDict(frozen=True)

    input_dim: int = 32
    hidden_layers: int = 3
    hidden_width: int = 256
    mu_max: float = 0.1

    @field_validator("input_dim", "hidden_width")
    @classmethod
    def _positive(cls, value):
        if value < 1:
            raise ValueError("layer widths must be positive")
        return value

    @field_validator("hidden_layers")
    @classmethod
    def _non_negative(cls, value):
        if value < 0:
            raise ValueError("hidden_layers must be non-negative")
        return value

    @field_validator("mu_max")
    @classmethod
    def _positive_scale(cls, value):
        if value <= 0:
            raise ValueError("mu_max must be positive")
        return value

    @property
    def layer_dims(self):
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [1]
