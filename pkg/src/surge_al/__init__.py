"""Active-learning deep-ensemble surrogate for pump surge distance."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
