"""Atlas-similarity computer-aided diagnosis on volumetric images."""

__version__ = "0.1.0"
