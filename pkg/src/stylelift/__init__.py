"""Semantic appearance transfer and multi-view style lifting toolkit."""

__version__ = "0.1.0"

from .errors import EngineError

__all__ = ["EngineError", "__version__"]
