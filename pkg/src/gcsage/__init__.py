"""Near-field multipath channel simulation and geometry-constrained SAGE estimation."""

__version__ = "0.1.0"
