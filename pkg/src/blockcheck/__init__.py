"""SMT-based invariance checking for discrete-time hierarchical block diagrams."""

__version__ = "0.1.0"
