"""Chains with complete connections in a multiscale random environment."""
__version__ = "0.1.0"
