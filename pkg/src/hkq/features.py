"""Envelope-statistics features.

For each moment order nu the amplitudes are raised to ``A**nu`` and three
population statistics are taken: point-wise SNR (mean/std), skewness and
(non-excess) kurtosis. Two log-intensity moments follow, with I = A**2:

    U = mean(ln I) - ln(mean(I))
    X = mean(I ln I) / mean(I) - mean(ln I)

Both are invariant to rescaling the amplitudes and U <= 0 by Jensen.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from hkq.errors import DegenerateInputError, FeatureError, InsufficientDataError

MIN_SAMPLES = 8


@dataclass(frozen=True)
class FeatureSchema:
    moment_orders: tuple
    include_log_moments: bool = True
    id: str = "default"

    def __post_init__(self):
        orders = tuple(float(v) for v in self.moment_orders)
        if not orders:
            raise ValueError("moment_orders must be nonempty")
        for nu in orders:
            if not 0.0 < nu <= 4.0:
                raise ValueError(f"moment order {nu} outside (0, 4]")
        object.__setattr__(self, "moment_orders", orders)

    def __len__(self):
        return 3 * len(self.moment_orders) + (2 if self.include_log_moments else 0)

    @property
    def names(self):
        out = []
        for nu in self.moment_orders:
            tag = f"{nu:g}"
            out += [f"snr_{tag}", f"skew_{tag}", f"kurt_{tag}"]
        if self.include_log_moments:
            out += ["log_u", "log_x"]
        return out

    def to_json(self):
        return json.dumps(
            {
                "id": self.id,
                "moment_orders": list(self.moment_orders),
                "include_log_moments": self.include_log_moments,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(tuple(raw["moment_orders"]), bool(raw["include_log_moments"]), str(raw["id"]))


DEFAULT_SCHEMA = FeatureSchema((0.72, 0.88, 1.0), True, "hkq-default-v1")
SCHEMAS = {DEFAULT_SCHEMA.id: DEFAULT_SCHEMA}


def get_schema(schema_id):
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise ValueError(f"unknown feature schema {schema_id!r}") from None


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    schema_id: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise ValueError("feature values must be finite")
        schema = SCHEMAS.get(self.schema_id)
        if schema is not None and values.size != len(schema):
            raise ValueError(f"expected {len(schema)} values for {self.schema_id}, got {values.size}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __eq__(self, other):
        if not isinstance(other, FeatureVector):
            return NotImplemented
        return self.schema_id == other.schema_id and np.array_equal(self.values, other.values)

    __hash__ = None

    def __len__(self):
        return self.values.size


def _check_size(a):
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] < MIN_SAMPLES:
        raise InsufficientDataError(f"need at least {MIN_SAMPLES} samples, got {a.shape[-1]}")
    return a


def moment_stats(amplitudes, nu):
    """Point-wise SNR, skewness and kurtosis of ``A**nu``.

    Accepts a 1-D set or a 2-D stack of sets (one per row); returns scalars
    or arrays accordingly.
    """
    a = _check_size(amplitudes)
    m = a**nu
    mu = m.mean(axis=-1, keepdims=True)
    d = m - mu
    var = np.mean(d * d, axis=-1)
    if np.any(var <= 0.0):
        raise DegenerateInputError("amplitudes are constant; moments undefined")
    sd = np.sqrt(var)
    mu = mu[..., 0]
    snr = mu / sd
    skew = np.mean(d**3, axis=-1) / sd**3
    kurt = np.mean(d**4, axis=-1) / var**2
    if a.ndim == 1:
        return float(snr), float(skew), float(kurt)
    return snr, skew, kurt


def log_moments(amplitudes):
    """Log-intensity moments (U, X); zero amplitudes are floored before the log."""
    a = _check_size(amplitudes)
    intensity = np.maximum(a * a, np.finfo(np.float64).tiny)
    log_i = np.log(intensity)
    mean_i = intensity.mean(axis=-1)
    mean_log = log_i.mean(axis=-1)
    u = mean_log - np.log(mean_i)
    x = np.mean(intensity * log_i, axis=-1) / mean_i - mean_log
    if a.ndim == 1:
        return float(u), float(x)
    return u, x


def feature_matrix(samples, schema=DEFAULT_SCHEMA):
    """Features for a stack of equally sized sets, shape ``(n_sets, len(schema))``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    cols = []
    for nu in schema.moment_orders:
        try:
            cols.extend(moment_stats(samples, nu))
        except (DegenerateInputError, InsufficientDataError) as exc:
            raise FeatureError(f"moment_stats(nu={nu:g})", exc) from exc
    if schema.include_log_moments:
        try:
            cols.extend(log_moments(samples))
        except InsufficientDataError as exc:
            raise FeatureError("log_moments", exc) from exc
    return np.column_stack(cols)


def extract_features(env, schema=DEFAULT_SCHEMA):
    values = feature_matrix(env.samples[None, :], schema)[0]
    if not np.all(np.isfinite(values)):
        raise FeatureError("extract_features", "non-finite statistic")
    return FeatureVector(values, schema.id)


def features_of_sets(sets, schema=DEFAULT_SCHEMA):
    """Feature matrix for many sets; equal-length sets are processed together."""
    sets = list(sets)
    out = np.empty((len(sets), len(schema)))
    by_len = {}
    for i, env in enumerate(sets):
        by_len.setdefault(len(env), []).append(i)
    for idx in by_len.values():
        out[idx] = feature_matrix(np.stack([sets[i].samples for i in idx]), schema)
    return out

