"""Camera relocalization with exposure-conditioned view synthesis and
feature-metric pose refinement."""

__version__ = "0.1.0"
