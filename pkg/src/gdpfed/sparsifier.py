"""Top-k magnitude sparsification and the sparsification-error model.

The sparsifier keeps the k largest-magnitude coordinates of a vector and
zeroes the rest.  Ties are broken toward lower indices so results are
identical across runs and platforms.  The error coefficient model
phi = (1 - k/d)^2 is the one used inside the convergence machinery; the
universally valid residual bound for top-k is the looser (1 - k/d).
"""

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "SparsePlan",
    "top_k",
    "sparsification_coefficient",
    "optimal_k_fraction",
]


@dataclass(frozen=True)
class SparsePlan:
    """Sparsification level k out of d coordinates with its error coefficient."""

    k: int
    d: int
    phi: float

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")
        if not 0 <= self.k <= self.d:
            raise ValueError(f"k must lie in [0, {self.d}], got {self.k}")
        expected = sparsification_coefficient(self.k, self.d)
        if not math.isclose(self.phi, expected, rel_tol=1e-12, abs_tol=1e-15):
            raise ValueError(f"phi={self.phi} inconsistent with (1 - k/d)^2 = {expected}")

    @classmethod
    def from_fraction(cls, fraction: float, d: int) -> "SparsePlan":
        k = int(round(fraction * d))
        return cls(k=k, d=d, phi=sparsification_coefficient(k, d))


def top_k(x: np.ndarray, k: int) -> np.ndarray:
    """Keep the k entries of largest absolute value, zeroing the rest.

    Selection runs in expected linear time via partitioning; ties at the
    selection boundary keep the lowest indices.  k=0 returns the zero vector,
    k=d returns a copy of x.
    """
    x = np.asarray(x)
    if x.ndim != 1:
        raise ValueError(f"expected a 1-d vector, got shape {x.shape}")
    d = x.shape[0]
    if not 0 <= k <= d:
        raise ValueError(f"k must lie in [0, {d}], got {k}")
    if k == 0:
        return np.zeros_like(x)
    if k == d:
        return x.copy()
    mags = np.abs(x)
    # kth largest magnitude; everything strictly above it is kept outright.
    threshold = np.partition(mags, d - k)[d - k]
    keep = mags > threshold
    n_above = int(keep.sum())
    # Fill the remaining slots from boundary ties, lowest indices first.
    ties = np.flatnonzero(mags == threshold)
    keep[ties[: k - n_above]] = True
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out


def sparsification_coefficient(k: int, d: int) -> float:
    """Error coefficient (1 - k/d)^2 of keeping k out of d coordinates."""
    if d < 1:
        raise ValueError(f"d must be positive, got {d}")
    if not 0 <= k <= d:
        raise ValueError(f"k must lie in [0, {d}], got {k}")
    return (1.0 - k / d) ** 2


def optimal_k_fraction(omega_m: float, sigma_sq_m: float, eta: float,
                       tau: int, r_m: float) -> "tuple[float, float]":
    """Closed-form sparsification level minimizing the error trade-off.

    Balances the residual error of dropping coordinates against the privacy
    noise retained with them.  Returns (k_fraction, phi_star), both clamped
    to [0, 1], with

        k*/d     = 1 - 2 omega sigma_sq / (eta tau mu4 r^2)
        phi*     = (2 omega sigma_sq / (eta tau mu4 r^2))^2
        mu4      = 32 eta tau + eta + eta / tau

    so phi* = (1 - k*/d)^2 before clamping.
    """
    if omega_m <= 0 or sigma_sq_m <= 0 or eta <= 0 or r_m <= 0:
        raise ValueError("omega_m, sigma_sq_m, eta, and r_m must be positive")
    if tau < 1:
        raise ValueError(f"tau must be a positive integer, got {tau}")
    mu4 = 32.0 * eta * tau + eta + eta / tau
    drop = 2.0 * omega_m * sigma_sq_m / (eta * tau * mu4 * r_m * r_m)
    k_fraction = min(max(1.0 - drop, 0.0), 1.0)
    phi_star = min(max(drop * drop, 0.0), 1.0)
    return k_fraction, phi_star
