"""Mortality modelling with penalized additive mixed models, random-walk
covariate forecasts and Lee-Carter / Li-Lee baselines."""
__version__ = "0.1.0"
