"""Simulation experiment: test grid, Monte-Carlo inference, uncertainty
decomposition, and error/uncertainty statistics per SNR level."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from hkq.bnn import TrainingData, predict_mc
from hkq.errors import ConfigurationError
from hkq.features import DEFAULT_SCHEMA, feature_matrix, get_schema
from hkq.hk_model import HkParams, add_rayleigh_noise, sample_hk
from hkq.metrics import lower_envelope, pearson, rmse
from hkq.rng import derive_seed, stream
from hkq.uncertainty import TARGETS, PredictionGrid, decompose_predictive, decompose_procedural

WEAK_CORRELATION = 0.1
ERROR_MODES = ("rmse", "mean_abs")


@dataclass
class ExperimentConfig:
    n_alpha: int = 31
    n_k: int = 11
    realizations: int = 10
    samples_per_set: int = 1000
    snr_levels: tuple = (None, 40.0, 30.0, 20.0)
    draws: int = 50
    seed: int = 0
    log10_alpha_range: tuple = (-0.3, 1.3)
    k_range: tuple = (0.0, 1.25)
    error_mode: str = "rmse"
    envelope_bins: int = 20

    def __post_init__(self):
        for name in ("n_alpha", "n_k", "realizations", "samples_per_set", "draws"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.error_mode not in ERROR_MODES:
            raise ConfigurationError(f"error_mode must be one of {ERROR_MODES}")
        self.snr_levels = tuple(None if s is None else float(s) for s in self.snr_levels)


def snr_label(snr_db):
    return "clean" if snr_db is None else f"{snr_db:g}"


@dataclass
class TestGrid:
    """Parameter points (alpha-major) and their envelope sets per SNR level.

    ``sets[label][p][r]`` is realization ``r`` of point ``p``.
    """

    log10_alpha: np.ndarray
    k: np.ndarray
    params: list
    sets: dict = field(default_factory=dict)

    @property
    def n_points(self):
        return len(self.params)

    def truth(self):
        return np.array([[p.log10_alpha, p.k] for p in self.params])

    def samples(self, label):
        return np.stack([env.samples for row in self.sets[label] for env in row])


def build_test_grid(config, threads=1):
    """log10(alpha) drawn uniformly at random (seeded, then sorted), k evenly
    spaced; clean sets first, then one independently seeded noise pass per
    SNR level."""
    lo, hi = config.log10_alpha_range
    la = np.sort(stream(derive_seed(config.seed, "alpha-grid")).uniform(lo, hi, config.n_alpha))
    ks = np.linspace(config.k_range[0], config.k_range[1], config.n_k)
    params = [HkParams(10.0**a, float(k)) for a in la for k in ks]

    def point(p):
        clean = [sample_hk(params[p], config.samples_per_set, derive_seed(config.seed, "set", p, r))
                 for r in range(config.realizations)]
        out = {}
        for snr in config.snr_levels:
            if snr is None:
                out[snr_label(snr)] = clean
            else:
                out[snr_label(snr)] = [add_rayleigh_noise(env, snr, derive_seed(config.seed, "noise", p, r, snr_label(snr)))
                                       for r, env in enumerate(clean)]
        return out

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        per_point = list(pool.map(point, range(len(params))))
    grid = TestGrid(la, ks, params)
    for snr in config.snr_levels:
        grid.sets[snr_label(snr)] = [pp[snr_label(snr)] for pp in per_point]
    return grid


def simulate_training_data(n_sets, samples_per_set=1000, seed=0, schema=DEFAULT_SCHEMA,
                           alpha_range=(0.5, 20.0), k_range=(0.0, 1.25), threads=1):
    """Fresh training sets: alpha log-uniform, k uniform over the given ranges."""
    rng = stream(derive_seed(seed, "train-params"))
    la = rng.uniform(math.log10(alpha_range[0]), math.log10(alpha_range[1]), n_sets)
    ks = rng.uniform(k_range[0], k_range[1], n_sets)
    chunk = 2000

    def block(start):
        stop = min(start + chunk, n_sets)
        samples = np.stack([sample_hk(HkParams(10.0 ** la[i], ks[i]), samples_per_set,
                                      derive_seed(seed, "train-set", i)).samples for i in range(start, stop)])
        return feature_matrix(samples, schema)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        features = np.concatenate(list(pool.map(block, range(0, n_sets, chunk))))
    return TrainingData(features, np.column_stack([la, ks]), schema.id)


@dataclass
class LevelResult:
    label: str
    grid: PredictionGrid
    procedural: object
    predictive: object
    prediction: np.ndarray
    error_rmse: np.ndarray
    error_mean_abs: np.ndarray


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    truth: np.ndarray
    levels: dict
    summary: dict
    rows: list


def _errors(values, truth):
    per_realization = values.mean(axis=2)
    overall = per_realization.mean(axis=1)
    mean_abs = np.abs(overall - truth)
    by_rmse = np.sqrt(np.mean((per_realization - truth[:, None, :]) ** 2, axis=1))
    return overall, by_rmse, mean_abs


def _correlation(x, y):
    try:
        r, p = pearson(x, y)
    except ValueError:
        return {"r": None, "p": None, "weak": True}
    return {"r": r, "p": p, "weak": abs(r) < WEAK_CORRELATION}


def run_experiment(config, model, grid=None, threads=1):
    """Predict every set of the test grid at every SNR level and summarize.

    Per point, ``error`` follows ``config.error_mode``; the other definition
    is still reported, in its own row columns and under
    ``correlation_other_error`` in the summary.
    """
    try:
        schema = get_schema(model.schema_id)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from None
    if grid is None:
        grid = build_test_grid(config, threads=threads)
    truth = grid.truth()
    n_p, n_r = grid.n_points, config.realizations
    levels = {}
    summary = {
        "format": "hkq-summary-v1",
        "config": {**asdict(config), "snr_levels": [snr_label(s) for s in config.snr_levels]},
        "model": {"schema_id": model.schema_id, "widths": model.widths},
        "error_definition": {
            "rmse": "per point: RMSE over realizations of the draw-averaged prediction",
            "mean_abs": "per point: |mean over realizations and draws - truth|",
            "used": config.error_mode,
        },
        "levels": {},
    }
    rows = []
    for snr in config.snr_levels:
        label = snr_label(snr)
        features = feature_matrix(grid.samples(label), schema)
        draws = predict_mc(model, features, config.draws, seed=derive_seed(config.seed, "predict", label))
        shape = (n_p, n_r, config.draws, len(TARGETS))
        pgrid = PredictionGrid(draws.means.reshape(shape), draws.variances.reshape(shape))
        proc = decompose_procedural(pgrid)
        predictive = decompose_predictive(pgrid)
        prediction, err_rmse, err_abs = _errors(pgrid.values, truth)
        levels[label] = LevelResult(label, pgrid, proc, predictive, prediction, err_rmse, err_abs)
        error, other = (err_rmse, err_abs) if config.error_mode == "rmse" else (err_abs, err_rmse)

        per_target = {}
        for t, name in enumerate(TARGETS):
            per_realization = pgrid.values[:, :, :, t].mean(axis=2)
            per_target[name] = {
                "rmse": rmse(per_realization, np.repeat(truth[:, t][:, None], n_r, axis=1)),
                "rmse_of_point_means": rmse(prediction[:, t], truth[:, t]),
                "correlation": {
                    comp: _correlation(error[:, t], getattr(proc, comp)[:, t])
                    for comp in ("epistemic", "aleatoric", "total")
                },
                "correlation_other_error": {
                    comp: _correlation(other[:, t], getattr(proc, comp)[:, t])
                    for comp in ("epistemic", "aleatoric", "total")
                },
                "correlation_predictive": {
                    comp: _correlation(error[:, t], getattr(predictive, comp)[:, t])
                    for comp in ("epistemic", "aleatoric", "total")
                },
                "median": {
                    "epistemic": float(np.median(proc.epistemic[:, t])),
                    "aleatoric": float(np.median(proc.aleatoric[:, t])),
                    "total": float(np.median(proc.total[:, t])),
                },
                "lower_envelope_aleatoric": [
                    [c, m] for c, m in lower_envelope(error[:, t], proc.aleatoric[:, t], config.envelope_bins)
                ],
            }
        summary["levels"][label] = per_target

        for p in range(n_p):
            row = {"snr": label, "point": p, "alpha": grid.params[p].alpha,
                   "log10_alpha": truth[p, 0], "k": truth[p, 1]}
            for t, name in enumerate(TARGETS):
                row.update({
                    f"{name}_prediction": prediction[p, t],
                    f"{name}_error": error[p, t],
                    f"{name}_error_rmse": err_rmse[p, t],
                    f"{name}_error_mean_abs": err_abs[p, t],
                    f"{name}_epistemic": proc.epistemic[p, t],
                    f"{name}_aleatoric": proc.aleatoric[p, t],
                    f"{name}_total": proc.total[p, t],
                    f"{name}_predictive_epistemic": predictive.epistemic[p, t],
                    f"{name}_predictive_aleatoric": predictive.aleatoric[p, t],
                    f"{name}_predictive_total": predictive.total[p, t],
                })
            rows.append(row)
    return ExperimentReport(config, truth, levels, summary, rows)
