"""Figure rendering for the report paths.

Each command that writes delimited output also renders a matplotlib figure
next to it.  Rendering is headless (Agg) and never alters the numeric
outputs; the CSV files remain the source of truth.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_convergence",
    "plot_sampling_ratios",
    "plot_noise_report",
    "plot_calibration",
]

_COLORS = {
    "p_fedavg": "tab:green",
    "dp_fedavg": "tab:red",
    "gdpfed": "tab:blue",
    "gdpfed_op": "tab:purple",
    "gdpfed_plus": "tab:orange",
}


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_convergence(runs: dict, path) -> Path:
    """Eval accuracy per round, mean over seeds, one curve per algorithm."""
    by_algorithm: "dict[str, list]" = {}
    for (algorithm, _seed), records in sorted(runs.items()):
        if records:
            by_algorithm.setdefault(algorithm, []).append(
                [r.eval_accuracy for r in records])
    fig, ax = plt.subplots(figsize=(6, 4))
    for algorithm, curves in by_algorithm.items():
        acc = np.mean(np.asarray(curves), axis=0)
        ax.plot(np.arange(1, acc.size + 1), acc,
                label=algorithm, color=_COLORS.get(algorithm))
    ax.set_xlabel("round")
    ax.set_ylabel("eval accuracy")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, Path(path))


def plot_sampling_ratios(solution, path) -> Path:
    groups = np.arange(len(solution.q_m))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(groups, [100 * q for q in solution.q_m], color="tab:blue")
    ax.set_xticks(groups)
    ax.set_xlabel("group")
    ax.set_ylabel("sampling ratio (%)")
    ax.set_title(f"objective = {solution.objective:.4g}")
    return _save(fig, Path(path))


def plot_noise_report(rows, path) -> Path:
    names = [r.algorithm for r in rows]
    totals = [r.report.lambda_total for r in rows]
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(names, totals, color=[_COLORS.get(n, "gray") for n in names])
    ax.set_ylabel("expected squared noise norm in global update")
    ax.tick_params(axis="x", rotation=20)
    return _save(fig, Path(path))


def plot_calibration(report, path) -> Path:
    groups = [r.group for r in report.rows]
    width = 0.4
    x = np.arange(len(groups))
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.bar(x - width / 2, [r.sigma_sq_numeric for r in report.rows], width,
           label="numeric")
    ax.bar(x + width / 2, [r.sigma_sq_closed_form for r in report.rows], width,
           label="closed form")
    ax.set_xticks(x)
    ax.set_xticklabels([f"group {g}\neps={r.epsilon}" for g, r in zip(groups, report.rows)])
    ax.set_ylabel("noise multiplier (variance)")
    ax.legend()
    return _save(fig, Path(path))
