"""Fast-reaction systems on the periodic torus: spectral simulation,
critical/slow manifold computation, and convergence-rate experiments."""

__version__ = "0.1.0"
