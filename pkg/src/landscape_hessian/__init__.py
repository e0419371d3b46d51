"""Gauss-Newton Hessian bounds and loss-landscape convergence for ReLU classifiers."""

__version__ = "0.1.0"
