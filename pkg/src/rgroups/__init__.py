"""Numerical realization of deformed diffeomorphism groups on metric charts."""

__version__ = "0.1.0"
