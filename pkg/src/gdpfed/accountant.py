"""Renyi-DP accounting for the subsampled Gaussian mechanism.

Implements the privacy curve of a Gaussian mechanism under without-replacement
client subsampling, additive composition over training rounds, conversion to
(epsilon, delta)-DP, and noise-multiplier calibration (numeric bisection plus
the closed-form sufficient bound).  All noise multipliers are variances
relative to unit l2-sensitivity: the clipping threshold is folded out, so a
group sum perturbed with per-client variance C^2 * sigma_sq / r carries total
variance C^2 * sigma_sq against sensitivity C and is accounted with sigma_sq.

All functions are pure and safe for concurrent use.
"""

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

__all__ = [
    "AccountantError",
    "UnreachableBudgetError",
    "PrivacyBudget",
    "SubsamplingParams",
    "RdpCurve",
    "NoiseCalibration",
    "DEFAULT_ORDERS",
    "gaussian_rdp",
    "subsampled_rdp",
    "simplified_subsampled_rdp",
    "subsampled_curve",
    "compose",
    "rdp_to_dp",
    "epsilon_of_sigma",
    "calibrate_sigma",
    "closed_form_sigma",
    "per_group_guarantee",
    "delta_from_population",
]


class AccountantError(ValueError):
    """Invalid input or degenerate state in privacy accounting."""


class UnreachableBudgetError(AccountantError):
    """No finite noise multiplier can satisfy the requested budget.

    On a finite order grid the conversion to (epsilon, delta)-DP cannot go
    below log(1/delta) / (alpha_max - 1) however large the noise, so targets
    under that floor are rejected instead of expanding the bracket forever.
    """


# Integer orders 2..256; the fractional refinement near alpha=1 is only valid
# for the plain Gaussian curve (the subsampled bound needs integer orders).
FRACTIONAL_ORDERS = (1.25, 1.5, 1.75)
DEFAULT_ORDERS = FRACTIONAL_ORDERS + tuple(range(2, 257))


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise AccountantError(f"epsilon must be positive, got {self.epsilon}")
        if not 0.0 < self.delta < 1.0:
            raise AccountantError(f"delta must lie in (0, 1), got {self.delta}")


@dataclass(frozen=True)
class SubsamplingParams:
    """Per-round sampling probability q, round count T, noise variance sigma_sq."""

    q: float
    T: int
    sigma_sq: float

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise AccountantError(f"q must lie in [0, 1], got {self.q}")
        if self.T < 1:
            raise AccountantError(f"T must be >= 1, got {self.T}")
        if not self.sigma_sq > 0:
            raise AccountantError(f"sigma_sq must be positive, got {self.sigma_sq}")


@dataclass(frozen=True)
class RdpCurve:
    """Renyi divergence bound rho(alpha) tabulated on increasing orders."""

    points: tuple  # of (alpha, rho) pairs

    def __post_init__(self):
        if len(self.points) < 2:
            raise AccountantError("an RDP curve needs at least two points")
        alphas = [a for a, _ in self.points]
        if any(a <= 1.0 for a in alphas):
            raise AccountantError("all orders must exceed 1")
        if any(b <= a for a, b in zip(alphas, alphas[1:])):
            raise AccountantError("orders must be strictly increasing")
        if any(r < 0 for _, r in self.points):
            raise AccountantError("rho values must be nonnegative")

    @property
    def alphas(self) -> tuple:
        return tuple(a for a, _ in self.points)

    @property
    def rhos(self) -> tuple:
        return tuple(r for _, r in self.points)


@dataclass(frozen=True)
class NoiseCalibration:
    sigma_sq: float
    achieved_epsilon: float
    method: str  # "closed_form" or "numeric"
    target: PrivacyBudget = field(compare=False)

    def __post_init__(self):
        if self.method not in ("closed_form", "numeric"):
            raise AccountantError(f"unknown calibration method {self.method!r}")


def delta_from_population(n: int) -> float:
    """Uniform failure parameter 1 / n**1.1 for an n-client federation."""
    if n < 2:
        raise AccountantError(f"population must have at least 2 clients, got {n}")
    return float(n) ** -1.1


def gaussian_rdp(sigma_sq: float, alpha: float) -> float:
    """RDP of the Gaussian mechanism at order alpha: alpha / (2 sigma_sq)."""
    if not sigma_sq > 0:
        raise AccountantError(f"sigma_sq must be positive, got {sigma_sq}")
    if not alpha > 1:
        raise AccountantError(f"alpha must exceed 1, got {alpha}")
    return alpha / (2.0 * sigma_sq)


def _log_binom(n: int, k: int) -> float:
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def subsampled_rdp(q: float, sigma_sq: float, alpha: int) -> float:
    """RDP bound of the subsampled Gaussian mechanism at integer order alpha.

    Evaluates the full binomial sum

        (1/(alpha-1)) * log(1 + q^2 C(alpha,2) min{4(e^rho(2)-1), 2 e^rho(2)}
                              + sum_{j=3}^{alpha} q^j C(alpha,j) 2 e^{(j-1) rho(j)})

    with rho(j) = gaussian_rdp(sigma_sq, j), clamped by the unamplified
    Gaussian value: subsampling never hurts, so gaussian_rdp(sigma_sq, alpha)
    is always a valid bound, and for large q the sum's noise-independent
    terms would otherwise exceed it.  Terms are accumulated in log domain; an
    overflow of the accumulator itself is signaled, never silently saturated.
    """
    if isinstance(alpha, float) and not alpha.is_integer():
        raise AccountantError(f"subsampled RDP needs an integer order, got {alpha}")
    alpha = int(alpha)
    if alpha < 2:
        raise AccountantError(f"alpha must be an integer >= 2, got {alpha}")
    if not 0.0 <= q <= 1.0:
        raise AccountantError(f"q must lie in [0, 1], got {q}")
    if not sigma_sq > 0:
        raise AccountantError(f"sigma_sq must be positive, got {sigma_sq}")
    if q == 0.0:
        return 0.0

    log_q = math.log(q)
    rho2 = gaussian_rdp(sigma_sq, 2)
    # min{4(e^rho2 - 1), 2 e^rho2}, stably: log(4(e^x - 1)) = log4 + x + log(1 - e^-x)
    log_min = min(
        math.log(4.0) + rho2 + math.log(-math.expm1(-rho2)),
        math.log(2.0) + rho2,
    )
    log_terms = [0.0, 2.0 * log_q + _log_binom(alpha, 2) + log_min]
    if alpha >= 3:
        j = np.arange(3, alpha + 1, dtype=float)
        with np.errstate(over="ignore"):  # overflow detected and raised below
            tail = (
                j * log_q
                + gammaln(alpha + 1.0) - gammaln(j + 1.0) - gammaln(alpha - j + 1.0)
                + math.log(2.0)
                + (j - 1.0) * j / (2.0 * sigma_sq)
            )
        log_terms.extend(tail.tolist())
    log_arg = float(logsumexp(log_terms))
    if math.isinf(log_arg) or math.isnan(log_arg):
        raise OverflowError(
            f"subsampled RDP accumulator overflowed at alpha={alpha}, "
            f"q={q}, sigma_sq={sigma_sq}"
        )
    return min(log_arg / (alpha - 1), gaussian_rdp(sigma_sq, alpha))


def simplified_subsampled_rdp(q: float, sigma_sq: float, alpha: int) -> "tuple[float, bool]":
    """Linear-in-alpha approximation 3.5 q^2 alpha / sigma_sq with validity flag.

    Valid only when sigma_sq >= 0.7 and
    alpha <= (2/3) sigma_sq log(1 / (q alpha (1 + sigma_sq))) + 1.  Returns
    (value, valid); out-of-window inputs are flagged rather than raised so
    parameter sweeps can proceed.
    """
    if not 0.0 <= q <= 1.0:
        raise AccountantError(f"q must lie in [0, 1], got {q}")
    if not sigma_sq > 0:
        raise AccountantError(f"sigma_sq must be positive, got {sigma_sq}")
    if alpha < 2:
        raise AccountantError(f"alpha must be an integer >= 2, got {alpha}")
    value = 3.5 * q * q * alpha / sigma_sq
    valid = sigma_sq >= 0.7
    if valid and q > 0.0:
        log_arg = 1.0 / (q * alpha * (1.0 + sigma_sq))
        valid = alpha <= (2.0 / 3.0) * sigma_sq * math.log(log_arg) + 1.0
    return value, valid


_ORDER_TABLE_CACHE: dict = {}


def _integer_order_table(alpha_max: int):
    """Cached log-binomial matrix over integer orders 2..alpha_max."""
    cached = _ORDER_TABLE_CACHE.get(alpha_max)
    if cached is None:
        alphas = np.arange(2, alpha_max + 1, dtype=float)
        j = np.arange(2, alpha_max + 1, dtype=float)
        with np.errstate(invalid="ignore"):
            log_binom = (gammaln(alphas[:, None] + 1.0) - gammaln(j[None, :] + 1.0)
                         - gammaln(alphas[:, None] - j[None, :] + 1.0))
        valid = j[None, :] <= alphas[:, None]
        cached = (alphas, j, np.where(valid, log_binom, -np.inf))
        _ORDER_TABLE_CACHE[alpha_max] = cached
    return cached


def _subsampled_rhos(q: float, sigma_sq: float, alpha_max: int) -> np.ndarray:
    """Vectorized subsampled bound over all integer orders 2..alpha_max.

    Evaluates the same clamped binomial sum as subsampled_rdp, one row of
    terms per order.
    """
    alphas, j, log_binom = _integer_order_table(alpha_max)
    plain = alphas / (2.0 * sigma_sq)
    if q == 0.0:
        return np.zeros_like(alphas)
    log_q = math.log(q)
    rho2 = 1.0 / sigma_sq
    log_min = min(
        math.log(4.0) + rho2 + math.log(-math.expm1(-rho2)),
        math.log(2.0) + rho2,
    )
    with np.errstate(over="ignore", invalid="ignore"):
        terms = (j[None, :] * log_q + log_binom + math.log(2.0)
                 + (j[None, :] - 1.0) * j[None, :] / (2.0 * sigma_sq))
    terms[:, 0] = 2.0 * log_q + log_binom[:, 0] + log_min
    stacked = np.concatenate([np.zeros((alphas.size, 1)), terms], axis=1)
    log_arg = logsumexp(stacked, axis=1)
    if not np.all(np.isfinite(log_arg)):
        raise OverflowError(
            f"subsampled RDP accumulator overflowed (q={q}, sigma_sq={sigma_sq})"
        )
    return np.minimum(log_arg / (alphas - 1.0), plain)


def subsampled_curve(q: float, sigma_sq: float,
                     orders: Sequence[float] = DEFAULT_ORDERS) -> RdpCurve:
    """Single-round RDP curve of the subsampled Gaussian on the order grid.

    Integer orders use the subsampled bound; fractional orders fall back to
    the plain Gaussian value, which upper-bounds the subsampled mechanism.
    """
    if not 0.0 <= q <= 1.0:
        raise AccountantError(f"q must lie in [0, 1], got {q}")
    if not sigma_sq > 0:
        raise AccountantError(f"sigma_sq must be positive, got {sigma_sq}")
    int_orders = [int(a) for a in orders if float(a).is_integer() and a >= 2]
    rho_by_order = {}
    if int_orders:
        rhos = _subsampled_rhos(q, sigma_sq, max(int_orders))
        for a in int_orders:
            rho_by_order[a] = float(rhos[a - 2])
    points = []
    for a in orders:
        if float(a).is_integer() and a >= 2:
            points.append((float(a), rho_by_order[int(a)]))
        else:
            points.append((float(a), gaussian_rdp(sigma_sq, float(a))))
    return RdpCurve(points=tuple(points))


def compose(curve: RdpCurve, T: int) -> RdpCurve:
    """T-fold sequential composition: rho_out(alpha) = T * rho_in(alpha)."""
    if T < 1:
        raise AccountantError(f"T must be >= 1, got {T}")
    return RdpCurve(points=tuple((a, T * r) for a, r in curve.points))


def rdp_to_dp(curve: RdpCurve, delta: float) -> "tuple[float, float]":
    """Convert an RDP curve to (epsilon, delta)-DP.

    Returns (epsilon, best_alpha) where epsilon is the exact minimum of
    rho(alpha) + log(1/delta)/(alpha - 1) over the curve's orders.
    """
    if not 0.0 < delta < 1.0:
        raise AccountantError(f"delta must lie in (0, 1), got {delta}")
    log_1_delta = math.log(1.0 / delta)
    best_eps = math.inf
    best_alpha = None
    for a, r in curve.points:
        eps = r + log_1_delta / (a - 1.0)
        if eps < best_eps:
            best_eps, best_alpha = eps, a
    if best_alpha is None:
        raise AccountantError("curve has no usable order above 1")
    return best_eps, best_alpha


def epsilon_of_sigma(params: SubsamplingParams, delta: float,
                     orders: Sequence[float] = DEFAULT_ORDERS) -> float:
    """Privacy loss after T rounds of the subsampled Gaussian mechanism."""
    curve = compose(subsampled_curve(params.q, params.sigma_sq, orders), params.T)
    eps, _ = rdp_to_dp(curve, delta)
    return eps


def calibrate_sigma(q: float, T: int, budget: PrivacyBudget,
                    rel_tol: float = 1e-4,
                    orders: Sequence[float] = DEFAULT_ORDERS,
                    max_iters: int = 200) -> NoiseCalibration:
    """Smallest noise variance meeting the budget, by bisection.

    The bracket starts at [1e-3, 1e3] and the upper end doubles until
    feasible.  Because the subsampled bound does not vanish with growing
    noise, some (q, T, epsilon) combinations are unreachable; those raise
    UnreachableBudgetError instead of expanding forever.
    """
    if not 0.0 < q <= 1.0:
        raise AccountantError(f"q must lie in (0, 1], got {q}")
    if not 0.0 < rel_tol <= 0.1:
        raise AccountantError(f"rel_tol must lie in (0, 0.1], got {rel_tol}")
    if T < 1:
        raise AccountantError(f"T must be >= 1, got {T}")

    def eps_at(sigma_sq: float) -> float:
        return epsilon_of_sigma(SubsamplingParams(q=q, T=T, sigma_sq=sigma_sq), budget.delta, orders)

    lo, hi = 1e-3, 1e3
    expansions = 0
    while eps_at(hi) > budget.epsilon:
        hi *= 2.0
        expansions += 1
        if expansions > 60:  # ~1e21: past any noise-driven improvement
            floor = eps_at(hi)
            raise UnreachableBudgetError(
                f"budget epsilon={budget.epsilon} is below the subsampling "
                f"floor (~{floor:.4g}) for q={q}, T={T}, delta={budget.delta}"
            )
    if eps_at(lo) <= budget.epsilon:
        hi = lo
    else:
        for _ in range(max_iters):
            mid = 0.5 * (lo + hi)
            if eps_at(mid) <= budget.epsilon:
                hi = mid
            else:
                lo = mid
            if (hi - lo) / hi < rel_tol:
                break
        else:
            raise AccountantError(
                f"calibration did not converge within {max_iters} iterations"
            )
    return NoiseCalibration(
        sigma_sq=hi,
        achieved_epsilon=eps_at(hi),
        method="numeric",
        target=budget,
    )


def closed_form_sigma(q: float, T: int, budget: PrivacyBudget) -> float:
    """Sufficient noise variance 7 q^2 T (eps + 2 log(1/delta)) / eps^2.

    Stated for eps < 2 log(1/delta); outside that range the value is still
    computed but a warning is emitted.
    """
    if not 0.0 <= q <= 1.0:
        raise AccountantError(f"q must lie in [0, 1], got {q}")
    if T < 1:
        raise AccountantError(f"T must be >= 1, got {T}")
    log_1_delta = math.log(1.0 / budget.delta)
    if budget.epsilon >= 2.0 * log_1_delta:
        warnings.warn(
            f"closed-form bound used outside its stated range: epsilon="
            f"{budget.epsilon} >= 2 log(1/delta) = {2.0 * log_1_delta:.4g}",
            stacklevel=2,
        )
    return 7.0 * q * q * T * (budget.epsilon + 2.0 * log_1_delta) / (budget.epsilon ** 2)


def per_group_guarantee(calibrations: Sequence[NoiseCalibration]) -> PrivacyBudget:
    """System-level guarantee over disjoint groups: the weakest group's epsilon."""
    if not calibrations:
        raise AccountantError("need at least one group calibration")
    deltas = {c.target.delta for c in calibrations}
    if len(deltas) != 1:
        raise AccountantError(f"groups must share delta, got {sorted(deltas)}")
    return PrivacyBudget(
        epsilon=max(c.achieved_epsilon for c in calibrations),
        delta=deltas.pop(),
    )
