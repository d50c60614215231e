"""Robot distance fields from tensor-product Bernstein polynomials."""

__version__ = "0.1.0"
