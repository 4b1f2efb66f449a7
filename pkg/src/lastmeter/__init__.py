"""Image-goal last-meter navigation on 2D gridworlds: relevance mapping, gated frontier
exploration, safety-aware Fast Marching control and a pose-registration cascade."""

__version__ = "0.1.0"
