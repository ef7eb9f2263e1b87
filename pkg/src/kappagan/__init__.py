"""Adversarial graph embedding on constant-curvature (kappa-stereographic) manifolds."""

__version__ = "0.1.0"
