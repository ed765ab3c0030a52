"""Measurement-error models for human labeling: simulation, crossed-effects
logistic GLMMs, outcome construction, text covariates and regime diagnosis."""

__version__ = "0.1.0"
