"""Feature extraction into RLRF interchange files."""

__version__ = "0.1.0"
