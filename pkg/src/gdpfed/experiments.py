"""Reproducible experiment pipelines built from the configuration file.

Wires the accountant, sampling optimizer, simulator, and metrics into the
four command pipelines (calibrate, optimize, simulate, noise-report).  Every
pipeline is a pure function of the parsed configuration, so reruns produce
identical outputs; (algorithm, seed) cells are independent and may execute
concurrently.
"""

import csv
import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import accountant, metrics, sampling
from .config import ExperimentConfig
from .fedsim import data as datasets
from .fedsim import models, simulator
from .sparsifier import optimal_k_fraction

__all__ = [
    "CalibrationRow",
    "CalibrationReport",
    "SimulationResult",
    "NoiseReportRow",
    "client_epsilons",
    "membership_groups",
    "build_federation_data",
    "group_calibrations",
    "plan_for_algorithm",
    "run_calibrate",
    "run_optimize",
    "run_simulate",
    "run_noise_report",
    "telemetry_csv",
    "summary_csv",
    "solution_csv",
    "calibration_csv",
    "noise_report_csv",
]

TELEMETRY_COLUMNS = ("t", "algorithm", "seed", "group", "sum_norm", "loss",
                     "acc", "clip_frac", "sigma_sq")
SUMMARY_COLUMNS = ("algorithm", "mean_acc", "std_acc", "best_acc")


def client_epsilons(cfg: ExperimentConfig) -> "list[float]":
    """Per-client budgets implied by the group budgets and ratios."""
    fed = cfg.federation
    shares = np.asarray(cfg.resolved_ratios(), dtype=float)
    raw = fed.n * shares / shares.sum()
    sizes = np.floor(raw).astype(int)
    order = np.lexsort((np.arange(fed.groups), -(raw - sizes)))
    for idx in order[: fed.n - sizes.sum()]:
        sizes[idx] += 1
    eps = []
    for m, size in enumerate(sizes):
        eps.extend([fed.epsilons[m]] * int(size))
    return eps


def membership_groups(cfg: ExperimentConfig) -> "list[simulator.GroupSpec]":
    """Baseline grouping at the uniform sampling ratio."""
    return simulator.assign_groups(
        client_epsilons(cfg), cfg.federation.groups,
        ratios=cfg.resolved_ratios(), q=cfg.federation.q,
    )


def _integer_participants(r_raw: np.ndarray, total: int) -> np.ndarray:
    counts = sampling.largest_remainder(r_raw, total)
    return np.maximum(counts, 1)


def _solve_ratios(cfg: ExperimentConfig, seed: int = 0) -> sampling.SamplingSolution:
    # Ratios always come from the optimal-coefficient formulation; the
    # configured sparsification mode governs only the k_m applied in training.
    fed, tr = cfg.federation, cfg.training
    groups = membership_groups(cfg)
    opt_cfg = sampling.OptimizationConfig(
        group_sizes=tuple(g.size for g in groups),
        epsilons=tuple(g.epsilon for g in groups),
        q_global=fed.q,
        T=tr.rounds if tr.rounds > 0 else 1,
        eta=tr.learning_rate,
        tau=tr.local_steps,
        delta=cfg.resolved_delta(),
        sparsification_mode="optimal_phi",
    )
    return sampling.solve(opt_cfg, seed=seed)


def group_calibrations(cfg: ExperimentConfig, groups: Sequence[simulator.GroupSpec],
                       method: Optional[str] = None) -> "list[accountant.NoiseCalibration]":
    """Per-group noise for the realized sampling ratios q = r / |G|."""
    method = method or cfg.federation.sigma_method
    T = max(cfg.training.rounds, 1)
    delta = cfg.resolved_delta()
    out = []
    for g in groups:
        budget = accountant.PrivacyBudget(g.epsilon, delta)
        q_real = g.r / g.size
        if method == "numeric":
            out.append(accountant.calibrate_sigma(q_real, T, budget))
        else:
            sigma = accountant.closed_form_sigma(q_real, T, budget)
            out.append(accountant.NoiseCalibration(
                sigma_sq=sigma, achieved_epsilon=budget.epsilon,
                method="closed_form", target=budget,
            ))
    return out


def _regroup(groups, q_m: Sequence[float], r_int: Sequence[int],
             k_fractions: Sequence[float]):
    return tuple(
        replace(g, q=float(q_m[i]), r=int(r_int[i]), k_fraction=float(k_fractions[i]))
        for i, g in enumerate(groups)
    )


def _plus_k_fractions(cfg: ExperimentConfig,
                      solution: sampling.SamplingSolution) -> "list[float]":
    sp = cfg.sparsification
    if sp.mode == "fixed_fractions":
        return list(sp.fractions)
    return [
        optimal_k_fraction(solution.omega_m[m], solution.sigma_sq_m[m],
                           cfg.training.learning_rate, cfg.training.local_steps,
                           solution.r_m[m])[0]
        for m in range(len(solution.omega_m))
    ]


def plan_for_algorithm(cfg: ExperimentConfig, algorithm: str, seed: int,
                       solution: Optional[sampling.SamplingSolution] = None
                       ) -> "tuple[simulator.TrainPlan, Optional[list]]":
    """Build the training plan and calibrations for one algorithm cell."""
    fed, tr = cfg.federation, cfg.training
    eps = client_epsilons(cfg)
    qn_int = max(int(round(fed.q * fed.n)), 1)

    if algorithm in (simulator.P_FEDAVG, simulator.DP_FEDAVG):
        groups = simulator.assign_groups(eps, 1, q=fed.q, r=[qn_int])
    else:
        groups = membership_groups(cfg)
        sizes = np.array([g.size for g in groups], dtype=float)
        if algorithm == simulator.GDPFED:
            r_int = _integer_participants(fed.q * sizes, qn_int)
            groups = _regroup(groups, r_int / sizes, r_int, [1.0] * len(groups))
        else:
            if solution is None:
                solution = _solve_ratios(cfg)
            r_int = _integer_participants(np.asarray(solution.r_m), qn_int)
            if algorithm == simulator.GDPFED_OP:
                k_fr = [1.0] * len(groups)
            else:
                k_fr = _plus_k_fractions(cfg, solution)
            groups = _regroup(groups, r_int / sizes, r_int, k_fr)

    plan = simulator.TrainPlan(
        algorithm=algorithm, T=tr.rounds, tau=tr.local_steps,
        eta=tr.learning_rate, lr_decay=tr.lr_decay, momentum=tr.momentum,
        batch_size=tr.batch_size, clip_norm=tr.clip_norm,
        groups=tuple(groups), seed=seed,
    )
    calibrations = None
    if plan.is_private:
        calibrations = group_calibrations(cfg, plan.groups)
    return plan, calibrations


def _build_model(cfg: ExperimentConfig, n_features: int, n_classes: int):
    tr = cfg.training
    if tr.model == "logistic":
        return models.LogisticRegression(n_features, n_classes)
    return models.Mlp(n_features, tr.hidden_units, n_classes, tr.activation)


def build_federation_data(cfg: ExperimentConfig) -> simulator.FederationData:
    """Client shards plus a held-out evaluation shard."""
    da, fed = cfg.data, cfg.federation
    if da.source == "synthetic":
        # One draw covers train and eval so both share the same class means.
        n_train = fed.n * da.examples_per_client
        full = datasets.synthetic_blobs(
            n_train + da.eval_examples, da.classes, da.features,
            seed=da.data_seed, class_sep=da.class_sep)
        train = full.subset(np.arange(n_train))
        eval_shard = full.subset(np.arange(n_train, len(full)))
    else:
        if da.source == "csv":
            full = datasets.load_csv(da.path)
        else:
            full = datasets.load_idx(da.images, da.labels)
        n_eval = max(1, len(full) // 5)
        perm = datasets.stream(da.data_seed, datasets.DATA, round_index=9).permutation(len(full))
        eval_shard = full.subset(np.sort(perm[:n_eval]))
        train = full.subset(np.sort(perm[n_eval:]))
    if da.noniid_alpha > 0:
        shards = datasets.dirichlet_partition(train, fed.n, da.noniid_alpha,
                                              seed=da.data_seed)
    else:
        shards = datasets.split_even(train, fed.n, seed=da.data_seed)
    n_classes = int(max(train.labels.max(), eval_shard.labels.max())) + 1
    model = _build_model(cfg, train.features.shape[1], n_classes)
    return simulator.FederationData(
        client_shards=tuple(shards), eval_shard=eval_shard, model=model)


# ---------------------------------------------------------------------------
# calibrate

@dataclass(frozen=True)
class CalibrationRow:
    group: int
    epsilon: float
    q: float
    sigma_sq_numeric: float        # nan when the budget is unreachable
    achieved_epsilon: float
    sigma_sq_closed_form: float


@dataclass(frozen=True)
class CalibrationReport:
    rows: "tuple[CalibrationRow, ...]"
    system_epsilon: float
    delta: float


def run_calibrate(cfg: ExperimentConfig) -> CalibrationReport:
    groups = membership_groups(cfg)
    T = max(cfg.training.rounds, 1)
    delta = cfg.resolved_delta()
    rows = []
    numeric = []
    for g in groups:
        budget = accountant.PrivacyBudget(g.epsilon, delta)
        closed = accountant.closed_form_sigma(g.q, T, budget)
        cal = accountant.calibrate_sigma(g.q, T, budget)
        numeric.append(cal)
        rows.append(CalibrationRow(
            group=g.group_id, epsilon=g.epsilon, q=g.q,
            sigma_sq_numeric=cal.sigma_sq, achieved_epsilon=cal.achieved_epsilon,
            sigma_sq_closed_form=closed,
        ))
    system = accountant.per_group_guarantee(numeric)
    return CalibrationReport(rows=tuple(rows), system_epsilon=system.epsilon,
                             delta=delta)


# ---------------------------------------------------------------------------
# simulate

@dataclass(frozen=True)
class SimulationResult:
    telemetry: "list[tuple]"          # TELEMETRY_COLUMNS rows
    summary: "list[metrics.SummaryRow]"
    runs: dict                        # (algorithm, seed) -> list[RoundRecord]


def _run_cell(cfg: ExperimentConfig, data: simulator.FederationData,
              algorithm: str, seed: int,
              solution: Optional[sampling.SamplingSolution]):
    plan, calibrations = plan_for_algorithm(cfg, algorithm, seed, solution)
    records, _final = simulator.run_training(plan, data, calibrations)
    sigma = [c.sigma_sq for c in calibrations] if calibrations else [0.0] * len(plan.groups)
    rows = []
    for rec in records:
        for m in range(len(plan.groups)):
            rows.append((
                rec.t, algorithm, seed, m,
                rec.per_group_sum_norms[m], rec.train_loss, rec.eval_accuracy,
                rec.clip_fraction[m], sigma[m],
            ))
    return rows, records


def run_simulate(cfg: ExperimentConfig, threads: int = 1) -> SimulationResult:
    data = build_federation_data(cfg)
    needs_solution = any(a in (simulator.GDPFED_OP, simulator.GDPFED_PLUS)
                         for a in cfg.training.algorithms)
    solution = _solve_ratios(cfg) if needs_solution else None
    cells = [(a, s) for a in cfg.training.algorithms for s in cfg.training.seeds]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {
                cell: pool.submit(_run_cell, cfg, data, cell[0], cell[1], solution)
                for cell in cells
            }
            outcomes = {cell: futures[cell].result() for cell in cells}
    else:
        outcomes = {cell: _run_cell(cfg, data, cell[0], cell[1], solution)
                    for cell in cells}
    telemetry = []
    runs = {}
    for cell in cells:  # deterministic merge order
        rows, records = outcomes[cell]
        telemetry.extend(rows)
        runs[cell] = records
    summary = metrics.summarize(runs) if any(runs.values()) else []
    return SimulationResult(telemetry=telemetry, summary=summary, runs=runs)


# ---------------------------------------------------------------------------
# optimize / noise report

def run_optimize(cfg: ExperimentConfig, seed: int = 0) -> sampling.SamplingSolution:
    return _solve_ratios(cfg, seed=seed)


@dataclass(frozen=True)
class NoiseReportRow:
    algorithm: str
    sigma_sq_m: "tuple[float, ...]"
    report: metrics.NoiseReport


def run_noise_report(cfg: ExperimentConfig) -> "list[NoiseReportRow]":
    """Noise magnitudes per algorithm, from numerically calibrated multipliers."""
    if cfg.federation.groups < 1:
        raise ValueError("need at least one group")
    data_model = _build_model(cfg, cfg.data.features, cfg.data.classes)
    d = data_model.dim
    rows = []
    solution = _solve_ratios(cfg)
    for algorithm in (simulator.DP_FEDAVG, simulator.GDPFED,
                      simulator.GDPFED_OP, simulator.GDPFED_PLUS):
        plan, _ = plan_for_algorithm(cfg, algorithm, seed=0, solution=solution)
        calibrations = group_calibrations(cfg, plan.groups, method="numeric")
        sigma = tuple(c.sigma_sq for c in calibrations)
        r = [g.r for g in plan.groups]
        omega = sampling.reweight(r, float(sum(r)))
        k = [int(round(g.k_fraction * d)) for g in plan.groups]
        rows.append(NoiseReportRow(
            algorithm=algorithm,
            sigma_sq_m=sigma,
            report=metrics.noise_magnitude(sigma, k, omega, d, cfg.training.clip_norm),
        ))
    return rows


# ---------------------------------------------------------------------------
# CSV emission (deterministic, no timestamps)

def _write_csv(columns, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def telemetry_csv(result: SimulationResult) -> str:
    return _write_csv(TELEMETRY_COLUMNS, result.telemetry)


def summary_csv(result: SimulationResult) -> str:
    rows = [(r.algorithm, r.mean_final_accuracy, r.std_final_accuracy,
             r.mean_best_accuracy) for r in result.summary]
    return _write_csv(SUMMARY_COLUMNS, rows)


def solution_csv(solution: sampling.SamplingSolution) -> str:
    rows = [
        (m, solution.q_m[m], solution.r_m[m], solution.r_m_integer[m],
         solution.omega_m[m], solution.sigma_sq_m[m], solution.objective,
         int(solution.converged))
        for m in range(len(solution.q_m))
    ]
    return _write_csv(
        ("group", "q_m", "r_m", "r_m_integer", "omega_m", "sigma_sq_m",
         "objective", "converged"), rows)


def calibration_csv(report: CalibrationReport) -> str:
    rows = [
        (r.group, r.epsilon, r.q, r.sigma_sq_numeric, r.achieved_epsilon,
         r.sigma_sq_closed_form, "")
        for r in report.rows
    ]
    rows.append(("system", report.system_epsilon, "", "", "", "", f"delta={report.delta!r}"))
    return _write_csv(
        ("group", "epsilon", "q", "sigma_sq_numeric", "achieved_epsilon",
         "sigma_sq_closed_form", "note"), rows)


def noise_report_csv(rows: "list[NoiseReportRow]") -> str:
    out = []
    for row in rows:
        for m, (sigma, lam) in enumerate(zip(row.sigma_sq_m,
                                             row.report.per_group_lambda)):
            out.append((row.algorithm, m, sigma, lam, row.report.lambda_total,
                        row.report.per_coordinate_var,
                        row.report.participation_weighted))
    return _write_csv(
        ("algorithm", "group", "sigma_sq", "lambda_group", "lambda_total",
         "per_coordinate_var", "participation_weighted"), out)
