"""
This module defines the exceptions raised by the reconstruction engine.
"""


class HashCTError(Exception):
    """Base class of every error raised by hashCT."""


class ConfigError(HashCTError, ValueError):
    """Raised when a configuration is missing values or is inconsistent."""


class BoundsError(HashCTError, IndexError):
    """Raised when an index lies outside the detector, view or level range."""


class DomainError(HashCTError, ValueError):
    """Raised when a coordinate lies outside the normalized unit cube."""


class ShapeError(HashCTError, ValueError):
    """Raised when array shapes or grids do not match."""


class StaleCacheError(HashCTError, RuntimeError):
    """Raised when a backward pass receives a cache from older parameters."""


class NumericalError(HashCTError, ArithmeticError):
    """Raised on NaN or infinite losses and gradients."""


class UnsupportedError(HashCTError, NotImplementedError):
    """Raised for acquisitions the analytic baselines do not handle."""


class ContainerError(HashCTError, ValueError):
    """Raised when a binary container has a wrong magic or a truncated payload."""
