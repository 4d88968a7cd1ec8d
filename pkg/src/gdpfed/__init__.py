"""Federated learning under heterogeneous client-level differential privacy.

Privacy accounting (subsampled Gaussian RDP), per-group noise calibration,
top-k sparsification, sampling-ratio optimization, and a deterministic
training simulator for the DP-FedAvg / GDPFed / GDPFed+ protocol family.
"""

from . import accountant, config, experiments, fedsim, metrics, sampling, sparsifier

__version__ = "0.1.0"

__all__ = [
    "accountant",
    "config",
    "experiments",
    "fedsim",
    "metrics",
    "sampling",
    "sparsifier",
    "__version__",
]
