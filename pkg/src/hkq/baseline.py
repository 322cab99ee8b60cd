"""Table-search estimator: nearest tabulated mean feature vector.

Each (alpha, k) grid point stores the feature vector averaged over
``repetitions`` simulated sets. A query is standardized with the table's
per-feature mean/stddev and matched to the closest entry (Euclidean);
entries are kept sorted by (alpha, k) so ties resolve to the smaller alpha,
then the smaller k.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from hkq.errors import ConfigurationError, TableBuildError
from hkq.features import DEFAULT_SCHEMA, feature_matrix
from hkq.hk_model import HkParams, sample_hk
from hkq.rng import derive_seed

FORMAT = "hkq-table-v1"


@dataclass
class FeatureTable:
    params: list
    means: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    schema_id: str
    n_per_point: int
    seed: int
    repetitions: int = 10

    def __post_init__(self):
        if not self.params:
            raise TableBuildError("table grid is empty")
        if self.means.shape != (len(self.params), self.center.size):
            raise TableBuildError("table means do not match grid size / feature count")
        if np.any(self.scale <= 0):
            raise TableBuildError("standardization stddevs must be > 0")

    def __len__(self):
        return len(self.params)

    @property
    def standardized(self):
        return (self.means - self.center) / self.scale


def default_grid(n_alpha=31, n_k=11):
    return 10.0 ** np.linspace(-0.3, 1.3, n_alpha), np.linspace(0.0, 1.25, n_k)


def build_table(alpha_grid, k_grid, n_per_point, schema=DEFAULT_SCHEMA, seed=0, repetitions=10, threads=1):
    if len(alpha_grid) == 0 or len(k_grid) == 0:
        raise TableBuildError("alpha and k grids must be nonempty")
    if n_per_point < 1000:
        raise TableBuildError(f"n_per_point must be >= 1000, got {n_per_point}")
    points = sorted((float(a), float(k)) for a in alpha_grid for k in k_grid)
    params = [HkParams(a, k) for a, k in points]

    def entry(i):
        sets = [sample_hk(params[i], n_per_point, derive_seed(seed, "table", points[i][0], points[i][1], r)).samples
                for r in range(repetitions)]
        return feature_matrix(np.stack(sets), schema).mean(axis=0)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        means = np.stack(list(pool.map(entry, range(len(params)))))
    center = means.mean(axis=0)
    scale = means.std(axis=0)
    for name, s in zip(schema.names, scale):
        if s == 0:
            raise TableBuildError(f"feature {name!r} is constant across the table")
    return FeatureTable(params, means, center, scale, schema.id, int(n_per_point), int(seed), int(repetitions))


def nearest_entries(table, features):
    """Index of the nearest table entry for each row of ``features``."""
    q = (np.atleast_2d(np.asarray(features, dtype=np.float64)) - table.center) / table.scale
    grid = table.standardized
    d2 = ((q[:, None, :] - grid[None, :, :]) ** 2).sum(axis=2)
    # argmin returns the first minimum, i.e. the smallest (alpha, k)
    return np.argmin(d2, axis=1)


def table_estimate(table, fv):
    if fv.schema_id != table.schema_id:
        raise ConfigurationError(f"feature schema {fv.schema_id!r} does not match table {table.schema_id!r}")
    return table.params[int(nearest_entries(table, fv.values)[0])]
