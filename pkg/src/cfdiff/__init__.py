"""Counterfactual image editing with conditional diffusion models on synthetic brain phantoms."""

__version__ = "0.1.0"
