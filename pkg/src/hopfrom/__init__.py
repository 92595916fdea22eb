"""Parametric reduced-order models of Hopf bifurcations by direct
parametrisation of an invariant manifold of a quadratic DAE."""

__version__ = "1.0.0"
