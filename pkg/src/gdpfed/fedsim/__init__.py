"""Federated training simulator: models, data, secure aggregation, protocol."""

from .data import DatasetShard, dirichlet_partition, load_csv, load_idx, split_even, synthetic_blobs
from .models import LogisticRegression, Mlp
from .secure import PrivacyViolationError, SealedUpdate, aggregate, seal
from .simulator import (
    ALGORITHMS,
    DP_FEDAVG,
    GDPFED,
    GDPFED_OP,
    GDPFED_PLUS,
    P_FEDAVG,
    ClientState,
    ClientUpdate,
    FederationData,
    GroupSpec,
    ModelVector,
    RoundRecord,
    SimulationError,
    TrainPlan,
    assign_groups,
    build_clients,
    clip_update,
    local_train,
    perturb,
    run_training,
    sample_clients,
    server_round,
)

__all__ = [
    "ALGORITHMS", "DP_FEDAVG", "GDPFED", "GDPFED_OP", "GDPFED_PLUS", "P_FEDAVG",
    "ClientState", "ClientUpdate", "DatasetShard", "FederationData", "GroupSpec",
    "LogisticRegression", "Mlp", "ModelVector", "PrivacyViolationError",
    "RoundRecord", "SealedUpdate", "SimulationError", "TrainPlan",
    "aggregate", "assign_groups", "build_clients", "clip_update",
    "dirichlet_partition", "load_csv", "load_idx", "local_train", "perturb",
    "run_training", "sample_clients", "seal", "server_round", "split_even",
    "synthetic_blobs",
]
