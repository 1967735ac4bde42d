"""Measurement-error-corrected food access analysis for two-phase designs."""

__version__ = "0.1.0"
SCHEMA_VERSION = "1.0"

__all__ = ["__version__", "SCHEMA_VERSION"]
