"""Band-wise hyperspectral pansharpening with rolling model propagation.

Subpackages are imported lazily by the CLI entry point so that thread-count
environment variables can be applied before numpy loads its BLAS.
"""

__version__ = "0.1.0"
