"""Bayesian inference for finite mixtures: exact enumeration, MCMC, evidence."""

__version__ = "0.1.0"
