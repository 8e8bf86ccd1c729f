"""Numerical laboratory for gradient descent on wide shallow ReLU networks and the NTK."""

__version__ = "0.1.0"
