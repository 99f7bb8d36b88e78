"""Bayesian localisation of a Poisson source from cusp-onset detector signals."""

__version__ = "0.1.0"
