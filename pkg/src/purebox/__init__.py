"""Prior-free transfer and query attack framework built on universal perturbations."""

__version__ = "0.1.0"
