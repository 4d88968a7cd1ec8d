"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
report.  Criterion 2 is expected to fail: the closed-form sufficient bound is
NOT an upper envelope of the exact binomial-sum accountant wherever the
target epsilon is large relative to the subsampling amplification (the
closed form derives from the simplified linear bound whose validity window
is violated there); the failure message reports the measured dominance
fraction.  Criterion 1 passes through its documented-deviation clause, with
the measured values printed alongside the reference table.
"""

import hashlib
import time

import numpy as np
import pytest
from scipy import stats

from gdpfed import experiments
from gdpfed.accountant import (
    PrivacyBudget,
    SubsamplingParams,
    calibrate_sigma,
    closed_form_sigma,
    delta_from_population,
    epsilon_of_sigma,
    gaussian_rdp,
    subsampled_rdp,
)
from gdpfed.cli import main
from gdpfed.config import parse_config
from gdpfed.fedsim.data import synthetic_blobs
from gdpfed.fedsim.models import LogisticRegression, Mlp
from gdpfed.fedsim.rng import DATA, NOISE, stream
from gdpfed.fedsim.simulator import (
    DP_FEDAVG,
    GDPFED,
    GroupSpec,
    TrainPlan,
    clip_update,
    perturb,
    run_training,
)
from gdpfed.metrics import noise_magnitude
from gdpfed.sampling import OptimizationConfig, solve
from gdpfed.sparsifier import top_k

DELTA_6000 = delta_from_population(6000)

# Reference noise multipliers for the 6000-client configuration at
# q = 0.02, T = 50, eps = (0.5, 1.5, 3.0).
REFERENCE_SIGMA_SQ = {0.5: 2.26, 1.5: 0.90, 3.0: 0.53}
REFERENCE_RATIOS = (0.0069, 0.0189, 0.0342)

BENCHMARK_CONFIG = """
[federation]
n = 300
groups = 3
epsilons = [0.5, 1.5, 3.0]
q = 0.1
delta = "auto"

[training]
algorithms = ["p_fedavg", "dp_fedavg", "gdpfed", "gdpfed_plus"]
rounds = 50
local_steps = 5
learning_rate = 0.1
lr_decay = 0.99
momentum = 0.0
batch_size = 10
clip_norm = 0.25
seeds = [1, 2, 3]

[sparsification]
mode = "fixed_fractions"
fractions = [0.7, 0.8, 0.9]

[data]
classes = 10
features = 32
examples_per_client = 60
class_sep = 7.0
eval_examples = 2000

[output]
directory = "OUTDIR"
"""

FMNIST_LIKE_CONFIG = """
[federation]
n = 6000
groups = 3
epsilons = [0.5, 1.5, 3.0]
q = 0.02
delta = "auto"

[training]
algorithms = ["dp_fedavg", "gdpfed"]
rounds = 50
local_steps = 5
clip_norm = 1.5
seeds = [1]

[sparsification]
mode = "fixed_fractions"
fractions = [0.7, 0.8, 0.9]

[data]
classes = 10
features = 32
examples_per_client = 1
eval_examples = 100

[output]
directory = "OUTDIR"
"""


def report(n, ok, detail):
    print(f"\n[criterion {n:>2}] {'PASS' if ok else 'FAIL'}: {detail}")


class TestAcceptance:
    def test_criterion_1_calibration_vs_reference(self):
        t0 = time.time()
        calibrated = {
            eps: calibrate_sigma(0.02, 50, PrivacyBudget(eps, DELTA_6000))
            for eps in (0.5, 1.5, 3.0)
        }
        elapsed = time.time() - t0
        measured = {eps: c.sigma_sq for eps, c in calibrated.items()}
        within = {
            eps: abs(measured[eps] - ref) / ref <= 0.15
            for eps, ref in REFERENCE_SIGMA_SQ.items()
        }
        detail = (
            f"sigma_sq measured {[round(measured[e], 3) for e in (0.5, 1.5, 3.0)]} "
            f"vs reference {[REFERENCE_SIGMA_SQ[e] for e in (0.5, 1.5, 3.0)]}, "
            f"{elapsed:.2f}s"
        )
        assert elapsed < 5.0, f"calibration took {elapsed:.2f}s"
        if all(within.values()):
            report(1, True, detail)
            return
        # Documented-deviation clause: the exact binomial-sum accountant lands
        # outside +/-15% of the reference table (which no bound in this code
        # base reproduces); soundness, minimality, and monotonicity gate the
        # build instead, and the deviation is printed here.
        for eps, cal in calibrated.items():
            assert cal.achieved_epsilon <= eps
            smaller = epsilon_of_sigma(
                SubsamplingParams(q=0.02, T=50, sigma_sq=0.9 * cal.sigma_sq),
                DELTA_6000)
            assert smaller > eps, "calibration is not minimal"
        assert measured[0.5] > measured[1.5] > measured[3.0]
        report(1, True, "documented deviation (exact-sum bound is looser); " + detail)

    def test_criterion_2_closed_form_dominance(self):
        t0 = time.time()
        cells = total = 0
        violations = []
        for q in (0.005, 0.02, 0.1):
            for T in (10, 50, 200):
                for eps in (0.5, 1.0, 2.0, 4.0, 8.0):
                    budget = PrivacyBudget(eps, DELTA_6000)
                    numeric = calibrate_sigma(q, T, budget).sigma_sq
                    closed = closed_form_sigma(q, T, budget)
                    total += 1
                    if closed >= numeric:
                        cells += 1
                    else:
                        violations.append((q, T, eps, round(closed, 4), round(numeric, 4)))
        elapsed = time.time() - t0
        assert elapsed < 30.0, f"sweep took {elapsed:.2f}s"
        detail = (f"closed form dominates in {cells}/{total} cells "
                  f"({elapsed:.1f}s); first violations {violations[:3]}")
        report(2, cells == total, detail)
        assert cells == total, detail

    def test_criterion_3_subsampling_amplification(self):
        t0 = time.time()
        qs = (0.005, 0.01, 0.02, 0.05, 0.1, 0.25, 0.5)
        sigmas = (0.7, 1.0, 2.26, 4.0, 8.0, 16.0)
        alphas = range(2, 65)
        for sigma_sq in sigmas:
            for alpha in alphas:
                plain = gaussian_rdp(sigma_sq, alpha)
                previous = -1.0
                for q in qs:
                    value = subsampled_rdp(q, sigma_sq, alpha)
                    assert value <= plain + 1e-12, (q, sigma_sq, alpha)
                    assert value >= previous - 1e-12, (q, sigma_sq, alpha)
                    previous = value
        elapsed = time.time() - t0
        assert elapsed < 10.0, f"grid took {elapsed:.2f}s"
        report(3, True, f"{len(qs) * len(sigmas) * 63} grid points, {elapsed:.1f}s")

    def test_criterion_4_sampling_optimizer(self):
        t0 = time.time()
        # (d) the 6000-client reference configuration
        fmnist = OptimizationConfig(
            group_sizes=(2000, 2000, 2000), epsilons=(0.5, 1.5, 3.0),
            q_global=0.02, T=50, eta=0.1, tau=5, delta=DELTA_6000)
        sol = solve(fmnist, seed=0)
        assert abs(sum(sol.r_m) - 120.0) <= 1e-6                       # (a)
        ratio_errors = [abs(q - ref) / ref
                        for q, ref in zip(sol.q_m, REFERENCE_RATIOS)]
        best_effort = all(err <= 0.25 for err in ratio_errors)         # (d)

        # (b) symmetric configuration collapses to uniform ratios
        symmetric = OptimizationConfig(
            group_sizes=(1500, 1500, 1500), epsilons=(2.0, 2.0, 2.0),
            q_global=0.04, T=50, eta=0.1, tau=5, delta=DELTA_6000)
        sym = solve(symmetric, seed=1)
        assert abs(sum(sym.r_m) - 0.04 * 4500) <= 1e-6                 # (a)
        assert all(abs(q - 0.04) < 1e-4 for q in sym.q_m)              # (b)

        # (c) budget ordering implies ratio ordering, random configs
        rng = stream(2024, DATA)
        ordered = 0
        for trial in range(50):
            eps = np.sort(rng.uniform(0.3, 8.0, size=3)) + np.arange(3) * 0.05
            sizes = tuple(int(s) for s in rng.integers(300, 3000, size=3))
            n = sum(sizes)
            cfg = OptimizationConfig(
                group_sizes=sizes, epsilons=tuple(float(e) for e in eps),
                q_global=float(rng.uniform(0.02, 0.1)), T=50, eta=0.1, tau=5,
                delta=delta_from_population(n))
            s = solve(cfg, seed=trial)
            assert abs(sum(s.r_m) - cfg.qn) <= 1e-6 * max(1.0, cfg.qn)  # (a)
            if s.q_m[0] < s.q_m[1] < s.q_m[2]:
                ordered += 1
        elapsed = time.time() - t0
        assert elapsed < 60.0, f"optimizer suite took {elapsed:.1f}s"
        detail = (f"constraints exact, symmetric uniform, ordering {ordered}/50, "
                  f"reference ratios {[round(100 * q, 3) for q in sol.q_m]}% "
                  f"(errors {[round(100 * e, 1) for e in ratio_errors]}% of reference, "
                  f"best-effort {'met' if best_effort else 'missed'}), {elapsed:.1f}s")
        assert ordered == 50, detail
        report(4, True, detail)

    def test_criterion_5_top_k_invariants(self):
        t0 = time.time()
        rng = stream(55, DATA)
        for i in range(10_000):
            d = int(rng.integers(2, 1001))
            x = rng.standard_cauchy(d) if i % 2 else rng.standard_normal(d)
            k = int(rng.integers(0, d + 1))
            kept = top_k(x, k)
            assert np.sum((kept - x) ** 2) <= (1.0 - k / d) * np.sum(x * x) + 1e-9
            order = np.lexsort((np.arange(d), -np.abs(x)))
            oracle = np.zeros_like(x)
            oracle[order[:k]] = x[order[:k]]
            assert np.array_equal(kept, oracle)
            if i % 20 == 0:
                assert np.array_equal(top_k(kept, k), kept)
        elapsed = time.time() - t0
        assert elapsed < 10.0, f"sparsifier suite took {elapsed:.1f}s"
        report(5, True, f"10000 vectors (normal + heavy-tailed), {elapsed:.1f}s")

    def test_criterion_6_perturbation_statistics(self):
        t0 = time.time()
        clip_norm, sigma_sq, r, d = 1.5, 2.26, 5, 100_000
        total = np.zeros(d)
        for client in range(r):
            update = clip_update(np.zeros(d), clip_norm)
            noised = perturb(update, clip_norm, sigma_sq, r,
                             stream(6, NOISE, 0, 0, client))
            total += noised.delta.coords
        target_var = clip_norm ** 2 * sigma_sq
        sample_var = float(np.mean(total * total))
        rel_err = abs(sample_var - target_var) / target_var
        # two-sided chi-square test at 99% confidence
        statistic = d * sample_var / target_var
        lo, hi = stats.chi2.ppf([0.005, 0.995], df=d)
        elapsed = time.time() - t0
        assert rel_err <= 0.05, f"variance off by {100 * rel_err:.2f}%"
        assert lo <= statistic <= hi, "chi-square test rejected the variance"
        assert elapsed < 10.0
        report(6, True,
               f"group-sum variance {sample_var:.4f} vs C^2 sigma^2 = {target_var:.4f} "
               f"({100 * rel_err:.2f}% off), chi-square in [{lo:.0f}, {hi:.0f}], "
               f"{elapsed:.1f}s")

    def test_criterion_7_utility_ordering(self, tmp_path):
        t0 = time.time()
        cfg = parse_config(BENCHMARK_CONFIG.replace("OUTDIR", str(tmp_path)))
        result = experiments.run_simulate(cfg, threads=4)
        accs = {row.algorithm: row.mean_final_accuracy for row in result.summary}
        elapsed = time.time() - t0
        detail = (f"mean final accuracy {dict((k, round(v, 4)) for k, v in accs.items())}, "
                  f"gdpfed - dp_fedavg = {accs['gdpfed'] - accs['dp_fedavg']:+.4f}, "
                  f"{elapsed:.0f}s")
        ok = (accs["p_fedavg"] > accs["gdpfed_plus"] >= accs["gdpfed"] > accs["dp_fedavg"]
              and accs["gdpfed"] - accs["dp_fedavg"] >= 0.02)
        report(7, ok, detail)
        assert elapsed < 300.0, f"benchmark took {elapsed:.0f}s"
        assert accs["p_fedavg"] > accs["gdpfed_plus"], detail
        assert accs["gdpfed_plus"] >= accs["gdpfed"], detail
        assert accs["gdpfed"] > accs["dp_fedavg"], detail
        assert accs["gdpfed"] - accs["dp_fedavg"] >= 0.02, detail

    def test_criterion_8_noise_magnitude_ordering(self, tmp_path):
        t0 = time.time()
        cfg = parse_config(FMNIST_LIKE_CONFIG.replace("OUTDIR", str(tmp_path)))
        rows = {r.algorithm: r.report for r in experiments.run_noise_report(cfg)}
        lam = {name: rep.lambda_total for name, rep in rows.items()}
        ordering_ok = (lam["dp_fedavg"] > lam["gdpfed"] > lam["gdpfed_op"]
                       >= lam["gdpfed_plus"])

        # The per-group-sum column is validated at the reference multipliers,
        # which it was designed to reproduce.
        single = noise_magnitude([2.26], [330], [1.0 / 120.0], 330, 1.5)
        triple = noise_magnitude([2.26, 0.90, 0.53], [330] * 3, [1 / 360] * 3,
                                 330, 1.5)
        col_ok = (abs(single.participation_weighted - 5.09) / 5.09 <= 0.05
                  and abs(triple.participation_weighted - 2.77) / 2.77 <= 0.05)
        elapsed = time.time() - t0
        detail = (f"lambda_total {dict((k, round(v, 4)) for k, v in lam.items())}, "
                  f"per-group-sum column {single.participation_weighted:.3f} / "
                  f"{triple.participation_weighted:.3f} vs 5.09 / 2.77, {elapsed:.1f}s")
        report(8, ordering_ok and col_ok, detail)
        assert elapsed < 5.0, f"noise report took {elapsed:.1f}s"
        assert ordering_ok, detail
        assert col_ok, detail

    def test_criterion_9_gradient_correctness(self):
        t0 = time.time()
        shard = synthetic_blobs(60, n_classes=4, n_features=8, seed=9, class_sep=3.0)
        X, y = shard.features, shard.labels
        models = [LogisticRegression(8, 4), Mlp(8, 6, 4, activation="tanh")]
        worst = 0.0
        rng = stream(90, DATA)
        for model in models:
            for _ in range(100):
                theta = rng.standard_normal(model.dim)
                analytic = model.gradient(theta, X, y)
                numeric = np.zeros_like(theta)
                for i in range(theta.size):
                    up, down = theta.copy(), theta.copy()
                    up[i] += 1e-6
                    down[i] -= 1e-6
                    numeric[i] = (model.loss(up, X, y) - model.loss(down, X, y)) / 2e-6
                rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
                worst = max(worst, rel)
        elapsed = time.time() - t0
        assert worst < 1e-5, f"worst relative error {worst:.2e}"
        assert elapsed < 10.0, f"gradient check took {elapsed:.1f}s"
        report(9, True, f"max relative error {worst:.2e} over 100 points x 2 models, "
                        f"{elapsed:.1f}s")

    def test_criterion_10_determinism_across_threads(self, tmp_path):
        t0 = time.time()
        config_text = BENCHMARK_CONFIG.replace("OUTDIR", str(tmp_path / "out"))
        config_text = config_text.replace("n = 300", "n = 30")
        config_text = config_text.replace("rounds = 50", "rounds = 3")
        config_text = config_text.replace("seeds = [1, 2, 3]", "seeds = [1, 2]")
        config_text = config_text.replace("examples_per_client = 60",
                                          "examples_per_client = 20")
        path = tmp_path / "exp.toml"
        path.write_text(config_text)
        digests = []
        for threads in (1, 4, 1, 4):
            assert main(["simulate", "--config", str(path),
                         "--threads", str(threads)]) == 0
            blob = (tmp_path / "out" / "telemetry.csv").read_bytes()
            digests.append(hashlib.sha256(blob).hexdigest())
        elapsed = time.time() - t0
        assert len(set(digests)) == 1, f"telemetry digests differ: {digests}"
        assert elapsed < 120.0, f"determinism check took {elapsed:.0f}s"
        report(10, True, f"4 runs x threads(1,4) -> identical sha256 "
                         f"{digests[0][:12]}..., {elapsed:.0f}s")

    def test_criterion_11_reduction_identity(self):
        t0 = time.time()
        from gdpfed.fedsim.data import split_even
        from gdpfed.fedsim.models import LogisticRegression as Lr
        from gdpfed.fedsim.simulator import FederationData
        from gdpfed.accountant import NoiseCalibration

        blobs = synthetic_blobs(1200, n_classes=5, n_features=8, seed=11,
                                class_sep=4.0)
        shards = tuple(split_even(blobs.subset(np.arange(900)), 30, seed=1))
        data = FederationData(shards, blobs.subset(np.arange(900, 1200)), Lr(8, 5))
        group = GroupSpec(0, 0.5, tuple(range(30)), q=0.2, r=6)
        cal = [NoiseCalibration(sigma_sq=1.7, achieved_epsilon=0.5,
                                method="closed_form",
                                target=PrivacyBudget(0.5, DELTA_6000))]
        base = dict(T=10, tau=5, eta=0.1, lr_decay=0.99, momentum=0.0,
                    batch_size=10, clip_norm=0.25, groups=(group,), seed=77)
        rec_dp, final_dp = run_training(TrainPlan(algorithm=DP_FEDAVG, **base),
                                        data, cal)
        rec_g, final_g = run_training(TrainPlan(algorithm=GDPFED, **base),
                                      data, cal)
        elapsed = time.time() - t0
        assert rec_dp == rec_g, "round telemetry diverged"
        assert np.array_equal(final_dp.coords, final_g.coords), "final models differ"
        assert elapsed < 60.0
        report(11, True, f"10 rounds bitwise identical (records + final model), "
                         f"{elapsed:.0f}s")
