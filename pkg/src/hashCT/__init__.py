"""Hash-encoded neural field reconstruction for truncated field-of-view CT."""

__version__ = "0.1.0"
