"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats

from hkq import baseline, bnn
from hkq.features import DEFAULT_SCHEMA, FeatureVector, feature_matrix
from hkq.hk_model import HkParams, _rayleigh_phasor, hk_cdf, noise_sigma, sample_hk
from hkq.metrics import rmse
from hkq.rng import derive_seed, stream
from hkq.uncertainty import PredictionGrid, decompose_predictive, decompose_procedural

from conftest import DESK_EXPERIMENT, DESK_SAMPLES, DESK_TRAIN_SETS

GRID9 = [HkParams(a, k) for a in (0.5, 2.0, 20.0) for k in (0.0, 0.5, 1.25)]
RESULTS = {}


@pytest.fixture
def verdict(capsys):
    def record(number, ok, detail):
        line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        RESULTS[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def test_criterion_01_sampler_matches_density(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for i, p in enumerate(GRID9):
        env = sample_hk(p, 10**5, derive_seed(1, "ks", i))
        worst = max(worst, stats.kstest(env.samples, lambda x: hk_cdf(p, x)).statistic)
    elapsed = time.perf_counter() - t0
    ok = worst < 0.01 and elapsed < 120
    verdict(1, ok, f"max KS {worst:.5f} (< 0.01), {elapsed:.1f} s (< 120 s)")
    assert ok


def test_criterion_02_moment_law(verdict):
    worst = 0.0
    for i, p in enumerate(GRID9):
        env = sample_hk(p, 10**6, derive_seed(2, "moment", i))
        worst = max(worst, abs(env.power / (2 * p.k + 2) - 1))
    ok = worst < 0.01
    verdict(2, ok, f"max relative deviation of E[A^2] from 2k+2: {worst:.5f} (< 0.01)")
    assert ok


def test_criterion_03_noise_calibration(verdict):
    env = sample_hk(HkParams(2.0, 0.5), 10**6, derive_seed(3, "signal"))
    errs = []
    for snr in (20, 30, 40):
        r, _ = _rayleigh_phasor(len(env), noise_sigma(env.power, snr), derive_seed(3, "noise", snr))
        errs.append(abs(10 * math.log10(env.power / np.mean(r**2)) - snr))
    ok = max(errs) < 0.1
    verdict(3, ok, "achieved-SNR error dB at 20/30/40: " + ", ".join(f"{e:.4f}" for e in errs) + " (< 0.1)")
    assert ok


def test_criterion_04_law_of_total_variance(verdict):
    rng = stream(4)
    worst = 0.0
    for _ in range(1000):
        r, d = int(rng.integers(2, 21)), int(rng.integers(2, 101))
        values = rng.normal(rng.normal(0, 5), rng.uniform(0.01, 3), (1, r, d, 2))
        rep = decompose_procedural(PredictionGrid(values))
        within = values.var(axis=2).mean(axis=1)
        lhs = rep.total**2
        rhs = within + rep.aleatoric**2
        worst = max(worst, float(np.max(np.abs(lhs - rhs) / lhs)))
    hand = decompose_procedural(PredictionGrid(np.array([[0.0, 2.0], [1.0, 3.0]])[None, :, :, None]))
    exact = (hand.epistemic[0, 0], hand.aleatoric[0, 0], hand.total[0, 0]) == (1.0, 0.5, math.sqrt(1.25))
    ok = worst < 1e-9 and exact
    verdict(4, ok, f"max relative residual {worst:.2e} (< 1e-9); hand case exact: {exact}")
    assert ok


def test_criterion_05_variance_sum_identity(verdict):
    rng = stream(5)
    worst = 0.0
    for _ in range(200):
        shape = (3, int(rng.integers(1, 12)), int(rng.integers(2, 60)), 2)
        grid = PredictionGrid(rng.normal(0, 2, shape), rng.uniform(0.001, 2, shape))
        rep = decompose_predictive(grid)
        worst = max(worst, float(np.max(np.abs(rep.total**2 - rep.epistemic**2 - rep.aleatoric**2))))
    ok = worst < 1e-12
    verdict(5, ok, f"max |total^2 - epistemic^2 - aleatoric^2| {worst:.2e} (< 1e-12)")
    assert ok


class _OneFeature:
    id = "one"

    def __len__(self):
        return 1


def test_criterion_06_gradient_check(verdict):
    model = bnn.init_model(_OneFeature(), hidden_widths=[1], seed=6)
    rng = stream(60)
    for a in model.params():
        a += 0.3 * rng.standard_normal(a.shape)
    n_params = sum(a.size for a in model.params())
    x, y = rng.standard_normal((6, 1)), rng.standard_normal((6, 2))
    noise = [bnn.draw_noise(model, rng) for _ in range(2)]

    def loss():
        return bnn.elbo_loss(model, x, y, kl_weight=1.0, dataset_size=8, noise=noise)

    _, grads = loss()
    h, bad, worst = 1e-4, 0, 0.0
    for arr, g in zip(model.params(), grads):
        for idx in np.ndindex(arr.shape):
            keep = arr[idx]
            arr[idx] = keep + h
            up = loss()[0]
            arr[idx] = keep - h
            down = loss()[0]
            arr[idx] = keep
            fd = (up - down) / (2 * h)
            err = abs(fd - g[idx])
            worst = max(worst, err / max(abs(fd), 1e-12))
            bad += err > max(1e-4 * abs(fd), 1e-6)
    ok = n_params <= 20 and bad == 0
    verdict(6, ok, f"{n_params} parameters, {bad} mismatches, worst relative error {worst:.2e}")
    assert ok


def test_criterion_07_desk_scale_quality(verdict, desk_data, desk_trained, desk_grid):
    model, _, train_seconds = desk_trained
    truth = desk_grid.truth()
    features = feature_matrix(desk_grid.samples("clean"))
    n_r = DESK_EXPERIMENT.realizations
    labels = np.repeat(truth[:, 0], n_r)

    pred = bnn.predict_mc(model, features, DESK_EXPERIMENT.draws, seed=7).means[:, :, 0].mean(axis=1)
    bnn_rmse = rmse(pred, labels)
    const_rmse = rmse(np.full_like(labels, desk_data.targets[:, 0].mean()), labels)
    table = baseline.build_table(*baseline.default_grid(), 1000, seed=70)
    est = np.array([table.params[i].log10_alpha for i in baseline.nearest_entries(table, features)])
    table_rmse = rmse(est, labels)

    ok = (len(desk_data) >= 5000 and DESK_SAMPLES == 1000 and bnn_rmse <= 0.5 * const_rmse
          and bnn_rmse <= 1.25 * table_rmse and train_seconds <= 900)
    verdict(7, ok, f"RMSE(log10 alpha) BNN {bnn_rmse:.4f}, constant {const_rmse:.4f} "
                   f"({1 - bnn_rmse / const_rmse:.0%} below), table {table_rmse:.4f} "
                   f"(ratio {bnn_rmse / table_rmse:.2f} <= 1.25); {DESK_TRAIN_SETS} sets, trained in {train_seconds:.0f} s")
    assert ok


def test_criterion_08_correlation_trend(verdict, desk_report):
    levels = desk_report.summary["levels"]
    c40 = levels["40"]["log10_alpha"]["correlation"]["total"]
    c20 = levels["20"]["log10_alpha"]["correlation"]["total"]
    alt40 = levels["40"]["log10_alpha"]["correlation_other_error"]["total"]["r"]
    alt20 = levels["20"]["log10_alpha"]["correlation_other_error"]["total"]["r"]
    ok = c40["r"] > 0.3 and c40["p"] < 0.01 and c40["r"] >= c20["r"]
    verdict(8, ok, f"error={desk_report.config.error_mode}: r40 {c40['r']:.3f} (p {c40['p']:.1e}), "
                   f"r20 {c20['r']:.3f}; |mean - truth| error for reference: r40 {alt40:.3f}, r20 {alt20:.3f}")
    assert ok


def test_criterion_09_aleatoric_dominates(verdict, desk_report):
    parts = []
    ok = True
    for label, level in desk_report.summary["levels"].items():
        for name, short in (("log10_alpha", "a"), ("k", "k")):
            med = level[name]["median"]
            ok &= med["aleatoric"] > med["epistemic"]
            parts.append(f"{label}/{short} {med['aleatoric']:.3f}>{med['epistemic']:.3f}")
    verdict(9, ok, "median aleatoric > epistemic: " + ", ".join(parts))
    assert ok


def test_criterion_10_table_self_consistency(verdict):
    table = baseline.build_table(*baseline.default_grid(), 1000, seed=10)
    hits = sum(
        baseline.table_estimate(table, FeatureVector(table.means[i], DEFAULT_SCHEMA.id)) == table.params[i]
        for i in range(len(table))
    )
    ok = len(table) == 341 and hits == 341
    verdict(10, ok, f"{hits}/{len(table)} entries returned exactly")
    assert ok


def test_criterion_11_pipeline_determinism(verdict, tmp_path, cli_pipeline):
    a = cli_pipeline(tmp_path / "run1", 7)
    b = cli_pipeline(tmp_path / "run2", 7)
    ok = a == b and len(a) > 0
    verdict(11, ok, f"summary JSON byte-identical across two strict runs: {a == b} ({len(a)} bytes)")
    assert ok
