"""Perturbation-based explainers and scaffolded classifiers that hide a
biased model's reliance on a sensitive feature from them."""

__version__ = "0.1.0"
