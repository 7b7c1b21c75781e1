"""refrec: multi-class anomaly detection by reconstructing patch features
from a learnable per-position reference bank."""

__version__ = "0.1.0"
