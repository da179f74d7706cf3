"""Data-driven reduction of chemical reaction mechanisms by sparse reaction selection."""

__version__ = "0.1.0"
