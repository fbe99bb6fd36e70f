"""Mass-constrained Kirchhoff energy minimization on planar grids."""

__version__ = "0.1.0"
