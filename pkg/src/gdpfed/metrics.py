"""Noise-magnitude reporting, convergence-bound evaluation, run summaries."""

import warnings
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .sampling import mu_constants

__all__ = [
    "NoiseReport",
    "BoundInputs",
    "SummaryRow",
    "noise_magnitude",
    "convergence_bound",
    "sparsification_tradeoff_terms",
    "summarize",
]


@dataclass(frozen=True)
class NoiseReport:
    """Expected noise magnitudes in one configuration.

    per_group_lambda:   d C^2 sigma_sq_m, the expected squared l2-norm of the
                        noise in each group's sum.
    per_coordinate_var: average per-coordinate noise variance of the global
                        update (noise survives on k_m of d coordinates).
    lambda_total:       sum_m k_m omega_m^2 C^2 sigma_sq_m, the exact expected
                        squared noise norm in the reweighted global update.
    participation_weighted: sum_m w_m C^2 sigma_sq_m with w_m = r_m^2/sum r_j^2,
                        a per-group-sum figure independent of absolute scale.
    """

    per_group_lambda: "tuple[float, ...]"
    per_coordinate_var: float
    lambda_total: float
    participation_weighted: float

    def __post_init__(self):
        if any(v < 0 for v in self.per_group_lambda) or self.lambda_total < 0:
            raise ValueError("noise magnitudes must be nonnegative")


def noise_magnitude(sigma_sq_m: Sequence[float], k_m: Sequence[int],
                    omega_m: Sequence[float], d: int, clip_norm: float) -> NoiseReport:
    """Noise magnitudes for per-group multipliers under reweighted aggregation."""
    sigma = np.asarray(sigma_sq_m, dtype=float)
    k = np.asarray(k_m, dtype=int)
    omega = np.asarray(omega_m, dtype=float)
    if not (sigma.shape == k.shape == omega.shape):
        raise ValueError("sigma_sq_m, k_m, omega_m must have matching lengths")
    if d < 1 or np.any(k < 0) or np.any(k > d):
        raise ValueError(f"k_m must lie in [0, d={d}]")
    if clip_norm <= 0:
        raise ValueError("clip_norm must be positive")
    c_sq = clip_norm * clip_norm
    lam_groups = d * c_sq * sigma
    lam_total = float(np.sum(k * omega * omega * c_sq * sigma))
    share = omega / omega.sum()  # proportional to r_m^2 / sum r_j^2
    participation = float(np.sum(share * c_sq * sigma))
    return NoiseReport(
        per_group_lambda=tuple(float(v) for v in lam_groups),
        per_coordinate_var=lam_total / d,
        lambda_total=lam_total,
        participation_weighted=participation,
    )


@dataclass(frozen=True)
class BoundInputs:
    L: float
    kappa_sq: float
    beta_sq: float
    zeta_sq_m: "tuple[float, ...]"
    f0_minus_fstar: float
    eta: float
    tau: int
    T: int
    d: int
    clip_norm: float
    omega_m: "tuple[float, ...]"
    sigma_sq_m: "tuple[float, ...]"
    r_m: "tuple[float, ...]"
    k_m: "tuple[int, ...]"
    q_m: "tuple[float, ...]"

    def __post_init__(self):
        if self.beta_sq < 1.0:
            raise ValueError(f"beta_sq must be >= 1, got {self.beta_sq}")
        if self.kappa_sq < 0.0:
            raise ValueError(f"kappa_sq must be >= 0, got {self.kappa_sq}")
        positives = (self.L, self.f0_minus_fstar, self.eta, self.tau, self.T,
                     self.d, self.clip_norm)
        if any(v <= 0 for v in positives):
            raise ValueError("L, f0_minus_fstar, eta, tau, T, d, clip_norm must be positive")
        M = len(self.omega_m)
        groups = (self.zeta_sq_m, self.sigma_sq_m, self.r_m, self.k_m, self.q_m)
        if any(len(g) != M for g in groups):
            raise ValueError("per-group inputs must have matching lengths")


def convergence_bound(inputs: BoundInputs) -> float:
    """Upper bound on the mean squared gradient norm after T rounds.

        8 (f0 - f*) / (eta T tau) + mu1 kappa^2
        + mu2 sum_m omega_m (phi_m + 1) d zeta_sq_m
        + mu3 sum_m k_m omega_m^2 C^2 sigma_sq_m / (r_m q_m)

    with phi_m = (1 - k_m/d)^2.  Warns when eta violates the step-size window
    under which the bound is derived.
    """
    mu = mu_constants(inputs.eta, inputs.tau, inputs.L)
    eta_cap = min(
        1.0 / (4.0 * inputs.L * inputs.beta_sq * (inputs.tau + 1)
               + 8.0 * inputs.L * inputs.tau * inputs.beta_sq),
        1.0 / (16.0 * inputs.tau * inputs.L),
    )
    if inputs.eta > eta_cap:
        warnings.warn(
            f"eta={inputs.eta} exceeds the step-size window {eta_cap:.4g}; "
            "the bound is evaluated outside its stated assumptions",
            stacklevel=2,
        )
    total = 8.0 * inputs.f0_minus_fstar / (inputs.eta * inputs.T * inputs.tau)
    total += mu.mu1 * inputs.kappa_sq
    c_sq = inputs.clip_norm ** 2
    for m in range(len(inputs.omega_m)):
        phi = (1.0 - inputs.k_m[m] / inputs.d) ** 2
        total += mu.mu2 * inputs.omega_m[m] * (phi + 1.0) * inputs.d * inputs.zeta_sq_m[m]
        total += (mu.mu3 * inputs.k_m[m] * inputs.omega_m[m] ** 2 * c_sq
                  * inputs.sigma_sq_m[m] / (inputs.r_m[m] * inputs.q_m[m]))
    return total


def sparsification_tradeoff_terms(k: int, d: int, omega: float, sigma_sq: float,
                                  r: float, eta: float, tau: int, L: float = 1.0,
                                  clip_norm: float = 1.0) -> float:
    """The two k-dependent error terms, under the worst-case gradient variance.

    Residual error grows as coordinates are dropped while retained privacy
    noise shrinks; the closed-form optimum balances exactly these two terms
    (with zeta_sq bounded by C^2 and the group-sum normalization r^2).
    """
    mu = mu_constants(eta, tau, L)
    phi = (1.0 - k / d) ** 2
    c_sq = clip_norm * clip_norm
    return (mu.mu2 * omega * (phi + 1.0) * d * c_sq
            + mu.mu3 * k * omega * omega * c_sq * sigma_sq / (r * r))


@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    n_runs: int
    mean_final_accuracy: float
    std_final_accuracy: float
    mean_best_accuracy: float
    mean_rounds_to_threshold: float
    threshold_reached: bool


def summarize(runs: Mapping, threshold: float = 0.5) -> "list[SummaryRow]":
    """Aggregate per-(algorithm, seed) round records into per-algorithm rows.

    rounds-to-threshold counts rounds until eval accuracy first reaches the
    threshold; runs that never reach it contribute the round count T as a
    sentinel and clear the reached flag.
    """
    if not runs:
        raise ValueError("no runs to summarize")
    by_algorithm: "dict[str, list]" = {}
    for (algorithm, _seed), records in sorted(runs.items()):
        by_algorithm.setdefault(algorithm, []).append(records)
    rows = []
    for algorithm, record_sets in by_algorithm.items():
        finals, bests, rounds_to, reached_flags = [], [], [], []
        for records in record_sets:
            if not records:
                raise ValueError(f"empty record stream for {algorithm}")
            accs = [r.eval_accuracy for r in records]
            finals.append(accs[-1])
            bests.append(max(accs))
            hit = next((i for i, a in enumerate(accs) if a >= threshold), None)
            reached_flags.append(hit is not None)
            rounds_to.append(len(accs) if hit is None else hit + 1)
        rows.append(SummaryRow(
            algorithm=algorithm,
            n_runs=len(finals),
            mean_final_accuracy=float(np.mean(finals)),
            std_final_accuracy=float(np.std(finals)),
            mean_best_accuracy=float(np.mean(bests)),
            mean_rounds_to_threshold=float(np.mean(rounds_to)),
            threshold_reached=all(reached_flags),
        ))
    return rows
