"""Epistemic/aleatoric decomposition of Monte-Carlo predictions.

Predictions are held as a ``[sets, realizations, draws, targets]`` tensor:
realizations are independent observations of the same parameter point, draws
are independent samples of the network weights. All variances divide by N,
which makes the law of total variance exact for the procedural split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from hkq.errors import ConfigurationError, DimensionError

TARGETS = ("log10_alpha", "k")


@dataclass(frozen=True)
class PredictionGrid:
    values: np.ndarray
    predicted_variances: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 4:
            raise DimensionError(f"expected [sets, realizations, draws, targets], got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DimensionError("prediction values must be finite")
        object.__setattr__(self, "values", values)
        if self.predicted_variances is not None:
            var = np.asarray(self.predicted_variances, dtype=np.float64)
            if var.shape != values.shape:
                raise DimensionError(f"variance shape {var.shape} != value shape {values.shape}")
            if not np.all(np.isfinite(var)) or np.any(var < 0):
                raise DimensionError("predicted variances must be finite and >= 0")
            object.__setattr__(self, "predicted_variances", var)

    @property
    def n_sets(self):
        return self.values.shape[0]

    @property
    def n_realizations(self):
        return self.values.shape[1]

    @property
    def n_draws(self):
        return self.values.shape[2]


@dataclass(frozen=True)
class UncertaintyReport:
    """Per-set, per-target components in standard-deviation units."""

    epistemic: np.ndarray
    aleatoric: np.ndarray
    total: np.ndarray
    method: str

    def rows(self, set_ids=None, targets=TARGETS):
        n_sets, n_targets = self.total.shape
        set_ids = range(n_sets) if set_ids is None else set_ids
        for i, sid in enumerate(set_ids):
            for t in range(n_targets):
                yield {
                    "set_id": sid,
                    "target": targets[t],
                    "method": self.method,
                    "epistemic": float(self.epistemic[i, t]),
                    "aleatoric": float(self.aleatoric[i, t]),
                    "total": float(self.total[i, t]),
                }


def _centered(values):
    # Every component is shift-invariant; centering on one element per
    # set/target keeps constant grids exactly zero and limits cancellation.
    return values - values[:, :1, :1, :]


def decompose_procedural(grid):
    """Split spread into draw-to-draw (epistemic) and realization-to-realization
    (aleatoric) parts.

    epistemic = mean over realizations of the std over draws;
    aleatoric = std over realizations of the mean over draws;
    total = std over all draws and realizations pooled.
    """
    if grid.n_realizations < 2 or grid.n_draws < 2:
        raise DimensionError(
            f"need >= 2 realizations and >= 2 draws, got {grid.n_realizations} x {grid.n_draws}"
        )
    v = _centered(grid.values)
    epistemic = v.std(axis=2).mean(axis=1)
    aleatoric = v.mean(axis=2).std(axis=1)
    total = v.reshape(v.shape[0], -1, v.shape[3]).std(axis=1)
    return UncertaintyReport(epistemic, aleatoric, total, "procedural")


def decompose_predictive(grid):
    """Variance of the predicted means plus mean predicted variance.

    Realizations and draws are pooled as one Monte-Carlo population.
    """
    if grid.predicted_variances is None:
        raise ConfigurationError("predicted variances are required for this decomposition")
    if grid.n_draws < 2:
        raise DimensionError(f"need >= 2 draws, got {grid.n_draws}")
    n_sets, _, _, n_targets = grid.values.shape
    y = _centered(grid.values).reshape(n_sets, -1, n_targets)
    s2 = grid.predicted_variances.reshape(n_sets, -1, n_targets)
    epistemic_var = np.maximum(np.mean(y * y, axis=1) - np.mean(y, axis=1) ** 2, 0.0)
    aleatoric_var = s2.mean(axis=1)
    total = np.sqrt(epistemic_var + aleatoric_var)
    return UncertaintyReport(np.sqrt(epistemic_var), np.sqrt(aleatoric_var), total, "predictive")

