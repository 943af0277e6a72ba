"""Constrained variational calculus: Chetaev and vakonomic prescriptions."""

__version__ = "0.1.0"
