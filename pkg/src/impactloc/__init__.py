"""Probabilistic impact localisation from TDOA vectors with multitask GPs."""

__version__ = "0.1.0"
