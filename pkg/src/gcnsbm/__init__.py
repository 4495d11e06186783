"""Asymptotic performance of a single-layer GCN on attributed stochastic block models."""

from .core import DataParams, GcnParams, Loss, Metrics, Model, OrderParams, sample_mc, snr_total

__version__ = "0.1.0"
