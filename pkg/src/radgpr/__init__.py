"""Resource-aware distributed Gaussian process regression over time-varying networks."""

__version__ = "0.1.0"
