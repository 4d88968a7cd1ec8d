"""Command-line front end.

Subcommands: calibrate | optimize | simulate | noise-report.  Every command
takes a config file and writes delimited output plus a rendered figure into
the output directory.  Exit codes: 0 success, 2 configuration error,
3 computational failure.
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments, plots
from .accountant import AccountantError
from .config import ConfigError, ExperimentConfig, load_config
from .fedsim.simulator import SimulationError
from .sampling import InfeasibleError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COMPUTE = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gdpfed",
        description="Federated training under heterogeneous client-level DP",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("calibrate", "per-group noise multipliers and the system guarantee"),
        ("optimize", "solve for per-group client sampling ratios"),
        ("simulate", "run the configured (algorithm x seed) training cells"),
        ("noise-report", "expected DP noise magnitudes per algorithm"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="path to the TOML config")
        cmd.add_argument("--out", default=None, help="override [output].directory")
        cmd.add_argument("--seed-override", type=int, default=None,
                         help="replace [training].seeds with a single seed")
        cmd.add_argument("--threads", type=int, default=1,
                         help="concurrent (algorithm x seed) cells")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    if args.out is not None:
        cfg = replace(cfg, output=replace(cfg.output, directory=args.out))
    if args.seed_override is not None:
        if args.seed_override < 0:
            raise ConfigError("--seed-override must be nonnegative")
        cfg = replace(cfg, training=replace(cfg.training, seeds=(args.seed_override,)))
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(path: Path, text: str) -> None:
    path.write_text(text)
    print(f"wrote {path}")


def _cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    report = experiments.run_calibrate(cfg)
    out = _outdir(cfg)
    _emit(out / "calibration.csv", experiments.calibration_csv(report))
    plots.plot_calibration(report, out / "calibration.png")
    print(f"{'group':>5} {'eps':>8} {'q':>8} {'sigma^2 (numeric)':>18} "
          f"{'achieved eps':>13} {'sigma^2 (closed)':>17}")
    for r in report.rows:
        print(f"{r.group:>5} {r.epsilon:>8.3g} {r.q:>8.4g} "
              f"{r.sigma_sq_numeric:>18.4f} {r.achieved_epsilon:>13.4f} "
              f"{r.sigma_sq_closed_form:>17.4f}")
    print(f"system guarantee: ({report.system_epsilon:.4f}, {report.delta:.3e})-DP")
    return EXIT_OK


def _cmd_optimize(cfg: ExperimentConfig, args) -> int:
    solution = experiments.run_optimize(cfg)
    out = _outdir(cfg)
    _emit(out / "sampling_solution.csv", experiments.solution_csv(solution))
    plots.plot_sampling_ratios(solution, out / "sampling_ratios.png")
    print(f"{'group':>5} {'q_m (%)':>9} {'r_m':>9} {'r_int':>6} {'omega_m':>12} "
          f"{'sigma^2_m':>10}")
    for m in range(len(solution.q_m)):
        print(f"{m:>5} {100 * solution.q_m[m]:>9.3f} {solution.r_m[m]:>9.3f} "
              f"{solution.r_m_integer[m]:>6d} {solution.omega_m[m]:>12.6g} "
              f"{solution.sigma_sq_m[m]:>10.4f}")
    print(f"objective = {solution.objective:.6g}  converged = {solution.converged}")
    return EXIT_OK


def _cmd_simulate(cfg: ExperimentConfig, args) -> int:
    result = experiments.run_simulate(cfg, threads=max(1, args.threads))
    out = _outdir(cfg)
    _emit(out / "telemetry.csv", experiments.telemetry_csv(result))
    _emit(out / "summary.csv", experiments.summary_csv(result))
    if result.runs:
        plots.plot_convergence(result.runs, out / "convergence.png")
    for row in result.summary:
        print(f"{row.algorithm:>12}: final acc {row.mean_final_accuracy:.4f} "
              f"+/- {row.std_final_accuracy:.4f}  (best {row.mean_best_accuracy:.4f}, "
              f"{row.n_runs} seeds)")
    return EXIT_OK


def _cmd_noise_report(cfg: ExperimentConfig, args) -> int:
    rows = experiments.run_noise_report(cfg)
    out = _outdir(cfg)
    _emit(out / "noise_report.csv", experiments.noise_report_csv(rows))
    plots.plot_noise_report(rows, out / "noise_report.png")
    print(f"{'algorithm':>12} {'sigma^2_m':>28} {'Lambda_total':>13} "
          f"{'participation-weighted':>23}")
    for row in rows:
        sigmas = ", ".join(f"{s:.3f}" for s in row.sigma_sq_m)
        print(f"{row.algorithm:>12} {sigmas:>28} {row.report.lambda_total:>13.6g} "
              f"{row.report.participation_weighted:>23.4f}")
    return EXIT_OK


_COMMANDS = {
    "calibrate": _cmd_calibrate,
    "optimize": _cmd_optimize,
    "simulate": _cmd_simulate,
    "noise-report": _cmd_noise_report,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _COMMANDS[args.command](cfg, args)
    except (AccountantError, InfeasibleError, SimulationError, OverflowError) as exc:
        print(f"computation failed: {exc}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
