"""Per-group client sampling ratio optimization.

Minimizes the sampling/noise-dependent part of the convergence error over the
per-group sampling ratios q_m, subject to the expected-participation
constraint sum_m q_m |G_m| = q n and per-group bounds.  The noise model
inside the objective is the closed-form sufficient bound, under which
sigma_sq_m / r_m^2 is independent of q_m; the q-dependence enters through the
reweighting parameters and the sparsification coefficients.  Final noise for
a chosen solution is re-calibrated by the accountant.

The solver is a seeded multi-start projected search: random Dirichlet
restarts followed by pairwise-transfer coordinate descent on the constraint
surface.  It is deterministic, derivative-free, and dependency-free.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .accountant import PrivacyBudget, closed_form_sigma
from .fedsim.rng import RESTART, stream

__all__ = [
    "OptimizationConfig",
    "SamplingSolution",
    "MuConstants",
    "InfeasibleError",
    "reweight",
    "mu_constants",
    "problem1_objective",
    "solve",
    "largest_remainder",
]

CONSTRAINT_TOL = 1e-6


class InfeasibleError(ValueError):
    """The participation constraint cannot be met within the given bounds."""


@dataclass(frozen=True)
class MuConstants:
    mu1: float
    mu2: float
    mu3: float
    mu4: float
    mu5: float


def mu_constants(eta: float, tau: int, L: float = 1.0) -> MuConstants:
    """Convergence-bound constants for step size eta, tau local steps, smoothness L."""
    if eta <= 0 or L <= 0 or tau < 1:
        raise ValueError(f"eta, L must be positive and tau >= 1, got {eta}, {L}, {tau}")
    return MuConstants(
        mu1=4.0 * L * eta * tau + 4.0 * L * eta + 64.0 * L,
        mu2=32.0 * L * eta * tau + L * eta + L * eta / tau,
        mu3=4.0 * L / (eta * tau),
        mu4=32.0 * eta * tau + eta + eta / tau,
        mu5=4.0 / (eta * tau),
    )


def reweight(r_m: Sequence[float], qn: float) -> np.ndarray:
    """Aggregation weights omega_m = (1/qn) * r_m^2 / sum_j r_j^2."""
    r = np.asarray(r_m, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise ValueError("r_m must be a nonempty 1-d sequence")
    if np.any(r <= 0):
        raise ValueError(f"all expected participant counts must be positive, got {r}")
    if qn <= 0:
        raise ValueError(f"qn must be positive, got {qn}")
    sq = r * r
    return sq / (qn * sq.sum())


@dataclass(frozen=True)
class OptimizationConfig:
    group_sizes: "tuple[int, ...]"
    epsilons: "tuple[float, ...]"
    q_global: float
    T: int
    eta: float
    tau: int
    delta: float
    sparsification_mode: str = "optimal_phi"  # or "fixed_fractions"
    fractions: Optional["tuple[float, ...]"] = None  # k_m / d in fixed mode
    q_bounds: Optional["tuple[tuple[float, float], ...]"] = None

    def __post_init__(self):
        M = len(self.group_sizes)
        if M == 0:
            raise ValueError("need at least one group")
        if len(self.epsilons) != M:
            raise ValueError("epsilons must match group count")
        if any(s < 1 for s in self.group_sizes):
            raise ValueError("group sizes must be positive")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if not 0.0 < self.q_global <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q_global}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if self.T < 1 or self.tau < 1 or self.eta <= 0:
            raise ValueError("T, tau must be >= 1 and eta positive")
        if self.sparsification_mode not in ("optimal_phi", "fixed_fractions"):
            raise ValueError(f"unknown sparsification mode {self.sparsification_mode!r}")
        if self.sparsification_mode == "fixed_fractions":
            if self.fractions is None or len(self.fractions) != M:
                raise ValueError("fixed_fractions mode needs one k/d fraction per group")
            if any(not 0.0 <= f <= 1.0 for f in self.fractions):
                raise ValueError("fractions must lie in [0, 1]")
        if self.q_bounds is not None and len(self.q_bounds) != M:
            raise ValueError("q_bounds must match group count")

    @property
    def M(self) -> int:
        return len(self.group_sizes)

    @property
    def n(self) -> int:
        return int(sum(self.group_sizes))

    @property
    def qn(self) -> float:
        return self.q_global * self.n

    def r_bounds(self) -> "tuple[np.ndarray, np.ndarray]":
        """Bounds on expected participant counts; default floor is one client."""
        sizes = np.asarray(self.group_sizes, dtype=float)
        if self.q_bounds is None:
            lo = np.ones_like(sizes)
            hi = sizes.copy()
        else:
            lo = np.array([b[0] for b in self.q_bounds]) * sizes
            hi = np.array([b[1] for b in self.q_bounds]) * sizes
        return lo, hi


@dataclass(frozen=True)
class SamplingSolution:
    q_m: "tuple[float, ...]"
    r_m: "tuple[float, ...]"
    r_m_integer: "tuple[int, ...]"
    objective: float
    omega_m: "tuple[float, ...]"
    sigma_sq_m: "tuple[float, ...]"
    converged: bool = field(compare=False, default=True)


def _closed_form_sigmas(cfg: OptimizationConfig, q_m: np.ndarray) -> np.ndarray:
    return np.array([
        closed_form_sigma(float(q), cfg.T, PrivacyBudget(eps, cfg.delta))
        for q, eps in zip(q_m, cfg.epsilons)
    ])


@dataclass(frozen=True)
class _ObjectiveContext:
    """Precomputed pieces of the objective; the noise model gives
    sigma_sq_m = noise_scale_m * r_m^2, so sigma_sq_m / r_m^2 is constant."""

    mu: MuConstants
    noise_scale: np.ndarray          # closed-form sigma_sq per unit r^2
    eta_tau_mu4: float
    fixed_phi: Optional[np.ndarray]  # (phi, sqrt_phi) fixed per group, or None
    fixed_sqrt_phi: Optional[np.ndarray]


def _make_context(cfg: OptimizationConfig) -> _ObjectiveContext:
    mu = mu_constants(cfg.eta, cfg.tau)
    sizes = np.asarray(cfg.group_sizes, dtype=float)
    noise_scale = _closed_form_sigmas(cfg, np.ones(cfg.M)) / (sizes * sizes)
    if cfg.sparsification_mode == "fixed_fractions":
        fr = np.asarray(cfg.fractions, dtype=float)
        fixed_phi, fixed_sqrt_phi = (1.0 - fr) ** 2, 1.0 - fr
    else:
        fixed_phi = fixed_sqrt_phi = None
    return _ObjectiveContext(
        mu=mu, noise_scale=noise_scale,
        eta_tau_mu4=cfg.eta * cfg.tau * mu.mu4,
        fixed_phi=fixed_phi, fixed_sqrt_phi=fixed_sqrt_phi,
    )


def _objective_from_r(r: np.ndarray, cfg: OptimizationConfig,
                      ctx: _ObjectiveContext) -> float:
    sq = r * r
    omega = sq / (cfg.qn * sq.sum())
    noise_term = omega * ctx.noise_scale  # omega_m sigma_sq_m / r_m^2
    if ctx.fixed_phi is not None:
        phi, sqrt_phi = ctx.fixed_phi, ctx.fixed_sqrt_phi
    else:
        drop = 2.0 * omega * ctx.noise_scale / ctx.eta_tau_mu4
        phi = np.clip(drop * drop, 0.0, 1.0)
        sqrt_phi = np.minimum(drop, 1.0)
    terms = omega * (ctx.mu.mu4 * (1.0 + phi) + ctx.mu.mu5 * (1.0 - sqrt_phi) * noise_term)
    return float(terms.sum())


def problem1_objective(q_m: Sequence[float], cfg: OptimizationConfig) -> float:
    """Sampling/noise part of the convergence error at the given ratios."""
    q = np.asarray(q_m, dtype=float)
    if q.shape != (cfg.M,):
        raise ValueError(f"expected {cfg.M} ratios, got shape {q.shape}")
    sizes = np.asarray(cfg.group_sizes, dtype=float)
    r = q * sizes
    lo, hi = cfg.r_bounds()
    tol = CONSTRAINT_TOL * max(1.0, cfg.qn)
    if np.any(r < lo - tol) or np.any(r > hi + tol):
        raise InfeasibleError(f"ratios {q} violate the per-group bounds")
    if abs(r.sum() - cfg.qn) > tol:
        raise InfeasibleError(
            f"participation constraint violated: sum r_m = {r.sum():.8g}, "
            f"expected {cfg.qn:.8g}"
        )
    return _objective_from_r(r, cfg, _make_context(cfg))


def _project(y: np.ndarray, lo: np.ndarray, hi: np.ndarray, total: float) -> np.ndarray:
    """Project y onto {x : lo <= x <= hi, sum x = total} (Euclidean)."""
    # Bisection on the shift; sum(clip(y - lam)) is nonincreasing in lam.
    lam_lo = float(np.min(y - hi)) - 1.0
    lam_hi = float(np.max(y - lo)) + 1.0
    for _ in range(100):
        lam = 0.5 * (lam_lo + lam_hi)
        s = np.clip(y - lam, lo, hi).sum()
        if s > total:
            lam_lo = lam
        else:
            lam_hi = lam
    return np.clip(y - 0.5 * (lam_lo + lam_hi), lo, hi)


def largest_remainder(r: np.ndarray, total: int) -> np.ndarray:
    """Round to integers preserving the sum exactly."""
    floors = np.floor(r).astype(int)
    short = total - int(floors.sum())
    if short < 0:  # can happen only through float slack
        order = np.argsort(r - floors, kind="stable")
        for idx in order[: -short]:
            floors[idx] -= 1
        return floors
    remainders = r - floors
    order = np.lexsort((np.arange(r.size), -remainders))
    for idx in order[:short]:
        floors[idx] += 1
    return floors


def _coordinate_descent(r0: np.ndarray, cfg: OptimizationConfig, ctx: _ObjectiveContext,
                        lo: np.ndarray, hi: np.ndarray,
                        max_iters: int = 10_000,
                        rel_tol: float = 1e-10) -> "tuple[np.ndarray, float, bool]":
    """Pairwise-transfer descent keeping sum r fixed; shrinking step."""
    r = r0.copy()
    best = _objective_from_r(r, cfg, ctx)
    step = 0.25 * float(np.max(hi - lo))
    min_step = 1e-14 * max(1.0, cfg.qn)
    evals = 0
    M = r.size
    while evals < max_iters:
        if step <= min_step:
            return r, best, True
        sweep_start = best
        improved = False
        for i in range(M):
            for j in range(M):
                if i == j or evals >= max_iters:
                    continue
                # transfer mass from j to i, staying inside the box
                d = min(step, hi[i] - r[i], r[j] - lo[j])
                if d <= 0:
                    continue
                r[i] += d
                r[j] -= d
                val = _objective_from_r(r, cfg, ctx)
                evals += 1
                if val < best:
                    best = val
                    improved = True
                else:
                    r[i] -= d
                    r[j] += d
        if not improved:
            step *= 0.5
        elif abs(sweep_start - best) <= rel_tol * max(abs(sweep_start), 1e-300):
            return r, best, True
    return r, best, False


def solve(cfg: OptimizationConfig, seed: int = 0, n_restarts: int = 64) -> SamplingSolution:
    """Multi-start search for the optimal per-group sampling ratios."""
    sizes = np.asarray(cfg.group_sizes, dtype=float)
    lo, hi = cfg.r_bounds()
    qn = cfg.qn
    if lo.sum() > qn + CONSTRAINT_TOL or hi.sum() < qn - CONSTRAINT_TOL:
        raise InfeasibleError(
            f"bounds exclude the participation constraint: sum lo={lo.sum():.4g}, "
            f"sum hi={hi.sum():.4g}, qn={qn:.4g}"
        )
    ctx = _make_context(cfg)
    rng = stream(seed, RESTART)

    starts = [_project(qn * sizes / sizes.sum(), lo, hi, qn)]  # uniform ratios
    for _ in range(max(0, n_restarts - 1)):
        w = rng.dirichlet(np.ones(cfg.M))
        starts.append(_project(lo + w * (qn - lo.sum()), lo, hi, qn))

    best_r, best_val, best_conv = None, math.inf, False
    for r0 in starts:
        r, val, conv = _coordinate_descent(r0, cfg, ctx, lo, hi)
        if val < best_val:
            best_r, best_val, best_conv = r, val, conv

    # Exact constraint restoration after float drift.
    best_r = _project(best_r, lo, hi, qn)
    q_m = best_r / sizes
    omega = reweight(best_r, qn)
    sigma_sq = _closed_form_sigmas(cfg, q_m)
    r_int = largest_remainder(best_r, int(round(qn)))
    return SamplingSolution(
        q_m=tuple(float(v) for v in q_m),
        r_m=tuple(float(v) for v in best_r),
        r_m_integer=tuple(int(v) for v in r_int),
        objective=float(best_val),
        omega_m=tuple(float(v) for v in omega),
        sigma_sq_m=tuple(float(v) for v in sigma_sq),
        converged=bool(best_conv),
    )
