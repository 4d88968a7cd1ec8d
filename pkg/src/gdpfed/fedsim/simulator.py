"""Deterministic federated training over grouped clients.

One parameterized round loop covers the whole algorithm family:

  p_fedavg     plain averaging, no privacy mechanism
  dp_fedavg    single group, uniform sampling, clip + perturb
  gdpfed       per-group budgets, uniform sampling ratio
  gdpfed_op    per-group budgets, optimized sampling ratios
  gdpfed_plus  gdpfed_op plus per-group top-k sparsification of group sums

Per round and group: sample clients, broadcast, local SGD, clip, perturb,
seal, aggregate; the server sparsifies each group sum and applies the
reweighted total to the global model.  Sparsification happens server-side
only, after perturbation, so the privacy guarantee is preserved by
post-processing.  All randomness comes from counter-based streams keyed by
(seed, purpose, round, group, client); results are independent of execution
order and thread count.
"""

import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..sparsifier import top_k
from ..sampling import reweight
from .data import DatasetShard
from .rng import BATCH, INIT, NOISE, SAMPLE, stream
from .secure import PrivacyViolationError, aggregate, seal

__all__ = [
    "P_FEDAVG", "DP_FEDAVG", "GDPFED", "GDPFED_OP", "GDPFED_PLUS", "ALGORITHMS",
    "SimulationError", "ModelVector", "GroupSpec", "ClientState", "ClientUpdate",
    "TrainPlan", "RoundRecord", "FederationData",
    "assign_groups", "build_clients", "sample_clients", "local_train",
    "clip_update", "perturb", "server_round", "run_training",
]

P_FEDAVG = "p_fedavg"
DP_FEDAVG = "dp_fedavg"
GDPFED = "gdpfed"
GDPFED_OP = "gdpfed_op"
GDPFED_PLUS = "gdpfed_plus"
ALGORITHMS = (P_FEDAVG, DP_FEDAVG, GDPFED, GDPFED_OP, GDPFED_PLUS)


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelVector:
    coords: np.ndarray

    def __post_init__(self):
        if self.coords.ndim != 1:
            raise ValueError(f"model vector must be 1-d, got shape {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise SimulationError("model vector contains non-finite entries")

    @property
    def dim(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class GroupSpec:
    """One privacy group: its budget, members, sampling, and sparsification."""

    group_id: int
    epsilon: float
    client_ids: "tuple[int, ...]"
    q: float              # sampling ratio
    r: int                # sampled clients per round
    k_fraction: float = 1.0

    def __post_init__(self):
        if not self.client_ids:
            raise ValueError(f"group {self.group_id} is empty")
        if self.epsilon <= 0:
            raise ValueError(f"group {self.group_id}: epsilon must be positive")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"group {self.group_id}: q must lie in (0, 1]")
        if not 1 <= self.r <= len(self.client_ids):
            raise ValueError(
                f"group {self.group_id}: r={self.r} outside [1, {len(self.client_ids)}]"
            )
        if not 0.0 <= self.k_fraction <= 1.0:
            raise ValueError(f"group {self.group_id}: k_fraction must lie in [0, 1]")

    @property
    def size(self) -> int:
        return len(self.client_ids)


@dataclass(frozen=True)
class ClientState:
    client_id: int
    group_id: int
    shard: DatasetShard
    epsilon_i: float


@dataclass(frozen=True)
class ClientUpdate:
    group_id: int
    delta: ModelVector
    clipped: bool   # whether clipping actually rescaled the update
    noised: bool


@dataclass(frozen=True)
class TrainPlan:
    algorithm: str
    T: int
    tau: int
    eta: float
    lr_decay: float
    momentum: float
    batch_size: int
    clip_norm: float
    groups: "tuple[GroupSpec, ...]"
    seed: int
    normalized_weights: bool = False  # rescale so sum omega_m r_m = 1 (ablation aid)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.algorithm in (P_FEDAVG, DP_FEDAVG) and len(self.groups) != 1:
            raise ValueError(f"{self.algorithm} runs on a single group")
        if self.T < 0 or self.tau < 1 or self.batch_size < 1:
            raise ValueError("T must be >= 0, tau and batch_size >= 1")
        if self.eta <= 0 or not 0.0 < self.lr_decay <= 1.0 or self.clip_norm <= 0:
            raise ValueError("eta, lr_decay, clip_norm must be positive (decay <= 1)")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        ids = [c for g in self.groups for c in g.client_ids]
        if len(ids) != len(set(ids)):
            raise ValueError("groups must be disjoint")

    @property
    def is_private(self) -> bool:
        return self.algorithm != P_FEDAVG

    @property
    def n_clients(self) -> int:
        return sum(g.size for g in self.groups)


@dataclass(frozen=True)
class RoundRecord:
    t: int
    per_group_sum_norms: "tuple[float, ...]"
    global_update_norm: float
    train_loss: float
    eval_accuracy: float
    clip_fraction: "tuple[float, ...]"
    noise_theoretical_var: "tuple[float, ...]"

    def __post_init__(self):
        values = (self.global_update_norm, self.train_loss, self.eval_accuracy,
                  *self.per_group_sum_norms, *self.clip_fraction,
                  *self.noise_theoretical_var)
        if not all(math.isfinite(v) for v in values):
            raise SimulationError(f"round {self.t}: non-finite telemetry")


@dataclass(frozen=True)
class FederationData:
    client_shards: "tuple[DatasetShard, ...]"
    eval_shard: DatasetShard
    model: object  # LogisticRegression / Mlp / anything with the same surface


def assign_groups(epsilons: Sequence[float], M: int,
                  ratios: Optional[Sequence[float]] = None,
                  q: float = 1.0, r: Optional[Sequence[int]] = None,
                  k_fractions: Optional[Sequence[float]] = None) -> "list[GroupSpec]":
    """Sort clients by privacy budget and split into M contiguous groups.

    Group sizes follow `ratios` (default equal); each group's epsilon is the
    minimum over its members.  Sampling parameters default to q with
    r = round(q * size) and can be overridden per group.
    """
    eps = np.asarray(epsilons, dtype=float)
    n = eps.size
    if M < 1 or n < M:
        raise ValueError(f"need 1 <= M <= n, got M={M}, n={n}")
    if ratios is None:
        ratios = [1.0] * M
    if len(ratios) != M:
        raise ValueError(f"expected {M} ratios, got {len(ratios)}")
    shares = np.asarray(ratios, dtype=float)
    if np.any(shares <= 0):
        raise ValueError("group ratios must be positive")
    raw = n * shares / shares.sum()
    sizes = np.floor(raw).astype(int)
    remainder = n - sizes.sum()
    order_by_frac = np.lexsort((np.arange(M), -(raw - sizes)))
    for idx in order_by_frac[:remainder]:
        sizes[idx] += 1
    if np.any(sizes < 1):
        raise ValueError(f"group sizes {sizes.tolist()} contain an empty group")

    sorted_ids = np.lexsort((np.arange(n), eps))
    groups = []
    offset = 0
    for m in range(M):
        members = tuple(int(c) for c in sorted_ids[offset:offset + sizes[m]])
        offset += sizes[m]
        q_m = q
        r_m = r[m] if r is not None else max(1, int(round(q_m * len(members))))
        groups.append(GroupSpec(
            group_id=m,
            epsilon=float(eps[list(members)].min()),
            client_ids=members,
            q=q_m,
            r=r_m,
            k_fraction=k_fractions[m] if k_fractions is not None else 1.0,
        ))
    return groups


def build_clients(epsilons: Sequence[float], groups: Sequence[GroupSpec],
                  shards: Sequence[DatasetShard]) -> "list[ClientState]":
    """Join per-client budgets, group assignment, and data into ClientStates."""
    clients = {}
    for g in groups:
        for cid in g.client_ids:
            if epsilons[cid] < g.epsilon:
                raise ValueError(
                    f"client {cid} has budget {epsilons[cid]} below its group "
                    f"minimum {g.epsilon}"
                )
            clients[cid] = ClientState(
                client_id=cid, group_id=g.group_id,
                shard=shards[cid], epsilon_i=float(epsilons[cid]),
            )
    return [clients[cid] for cid in sorted(clients)]


def sample_clients(group: GroupSpec, round_index: int, seed: int) -> np.ndarray:
    """Uniform without-replacement sample of r clients, sorted by id."""
    rng = stream(seed, SAMPLE, round_index, group.group_id)
    chosen = rng.choice(len(group.client_ids), size=group.r, replace=False)
    ids = np.asarray(group.client_ids)[chosen]
    return np.sort(ids)


def local_train(theta: np.ndarray, shard: DatasetShard, model, tau: int,
                eta_t: float, batch_size: int, momentum: float,
                rng: np.random.Generator) -> np.ndarray:
    """tau steps of mini-batch SGD from theta; returns the parameter delta.

    Batches are drawn with replacement each step; momentum starts at zero
    (clients are stateless across rounds).
    """
    if len(shard) == 0:
        raise SimulationError("cannot train on an empty shard")
    w = theta.copy()
    velocity = np.zeros_like(w)
    n = len(shard)
    for step in range(tau):
        idx = rng.integers(0, n, size=batch_size)
        g = model.gradient(w, shard.features[idx], shard.labels[idx])
        if not np.all(np.isfinite(g)):
            raise SimulationError(
                f"non-finite gradient at local step {step} (eta_t={eta_t})"
            )
        velocity = momentum * velocity + g
        w = w - eta_t * velocity
    return w - theta


def clip_update(delta: np.ndarray, clip_norm: float, group_id: int = 0) -> ClientUpdate:
    """Scale the update by min(1, C / ||delta||); flags whether scaling occurred."""
    if clip_norm <= 0:
        raise ValueError(f"clip norm must be positive, got {clip_norm}")
    norm = float(np.linalg.norm(delta))
    if norm > clip_norm:
        scaled = delta * (clip_norm / norm)
        return ClientUpdate(group_id, ModelVector(scaled), clipped=True, noised=False)
    return ClientUpdate(group_id, ModelVector(delta.copy()), clipped=False, noised=False)


def perturb(update: ClientUpdate, clip_norm: float, sigma_sq_m: float, r_m: int,
            rng: np.random.Generator) -> ClientUpdate:
    """Add iid Gaussian noise with per-coordinate variance C^2 sigma_sq / r."""
    if update.noised:
        raise PrivacyViolationError("update already perturbed")
    if sigma_sq_m < 0 or r_m < 1 or clip_norm <= 0:
        raise ValueError("need sigma_sq >= 0, r >= 1, clip_norm > 0")
    norm = float(np.linalg.norm(update.delta.coords))
    if norm > clip_norm * (1.0 + 1e-9):
        raise PrivacyViolationError(
            f"update norm {norm} exceeds the clipping threshold {clip_norm}; "
            "clip before perturbing"
        )
    std = clip_norm * math.sqrt(sigma_sq_m / r_m)
    noise = std * rng.standard_normal(update.delta.dim)
    return replace(update, delta=ModelVector(update.delta.coords + noise), noised=True)


def _round_weights(plan: TrainPlan) -> np.ndarray:
    r = [g.r for g in plan.groups]
    omega = reweight(r, float(sum(r)))
    if plan.normalized_weights:
        omega = omega / float(np.dot(omega, r))
    return omega


def server_round(theta: np.ndarray, plan: TrainPlan, data: FederationData,
                 sigma_sq: Sequence[float], round_index: int) -> "tuple[np.ndarray, RoundRecord]":
    """Execute one full round; returns the new model and its telemetry."""
    model = data.model
    eta_t = plan.eta * plan.lr_decay ** round_index
    dim = theta.shape[0]

    group_sums = []
    sum_norms = []
    clip_fractions = []
    noise_vars = []
    sampled_shards = []
    for g in plan.groups:
        ids = sample_clients(g, round_index, plan.seed)
        sealed = []
        n_rescaled = 0
        for cid in ids:
            shard = data.client_shards[cid]
            sampled_shards.append(shard)
            delta = local_train(
                theta, shard, model, plan.tau, eta_t, plan.batch_size,
                plan.momentum, stream(plan.seed, BATCH, round_index, g.group_id, cid),
            )
            if plan.is_private:
                update = clip_update(delta, plan.clip_norm, g.group_id)
                n_rescaled += update.clipped
                update = perturb(
                    update, plan.clip_norm, sigma_sq[g.group_id], g.r,
                    stream(plan.seed, NOISE, round_index, g.group_id, cid),
                )
                sealed.append(seal(update, require_dp=True))
            else:
                raw = ClientUpdate(g.group_id, ModelVector(delta), clipped=False, noised=False)
                sealed.append(seal(raw, require_dp=False))
        group_sum = aggregate(sealed, expected_count=g.r)
        sum_norms.append(float(np.linalg.norm(group_sum)))
        clip_fractions.append(n_rescaled / g.r)
        noise_vars.append(
            plan.clip_norm ** 2 * sigma_sq[g.group_id] if plan.is_private else 0.0
        )
        k_m = int(round(g.k_fraction * dim))
        group_sums.append(top_k(group_sum, k_m))

    omega = _round_weights(plan)
    update = np.zeros_like(theta)
    for w, y in zip(omega, group_sums):
        update += w * y
    new_theta = theta + update

    train_loss = float(np.mean([
        model.loss(new_theta, s.features, s.labels) for s in sampled_shards
    ]))
    record = RoundRecord(
        t=round_index,
        per_group_sum_norms=tuple(sum_norms),
        global_update_norm=float(np.linalg.norm(update)),
        train_loss=train_loss,
        eval_accuracy=model.accuracy(new_theta, data.eval_shard.features,
                                     data.eval_shard.labels),
        clip_fraction=tuple(clip_fractions),
        noise_theoretical_var=tuple(noise_vars),
    )
    return new_theta, record


def run_training(plan: TrainPlan, data: FederationData,
                 calibrations: Optional[Sequence] = None
                 ) -> "tuple[list[RoundRecord], ModelVector]":
    """Run T rounds; fully determined by (plan, data, calibrations)."""
    n_features = data.eval_shard.features.shape[1]
    for shard in data.client_shards:
        if shard.features.shape[1] != n_features:
            raise SimulationError("client shards disagree on feature dimension")
    if plan.is_private:
        if calibrations is None or len(calibrations) != len(plan.groups):
            raise SimulationError("private algorithms need one calibration per group")
        sigma_sq = [c.sigma_sq for c in calibrations]
    else:
        sigma_sq = [0.0] * len(plan.groups)

    theta = data.model.init(stream(plan.seed, INIT))
    records = []
    for t in range(plan.T):
        theta, record = server_round(theta, plan, data, sigma_sq, t)
        records.append(record)
    return records, ModelVector(theta)
