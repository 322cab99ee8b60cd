"""Error metrics and error-versus-uncertainty statistics."""

from __future__ import annotations

import math

import numpy as np
from scipy import special
from scipy.stats import rankdata

from hkq.errors import DegenerateInputError, DimensionError


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise DimensionError("empty input")
    return a, b


def rmse(predictions, labels):
    p, y = _pair(predictions, labels)
    return float(np.sqrt(np.mean((p - y) ** 2)))


def pearson(x, y):
    """Sample correlation and its two-sided p-value.

    The p-value comes from t = r sqrt((n-2)/(1-r^2)) with n-2 degrees of
    freedom, using P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2).
    """
    x, y = _pair(x, y)
    n = x.size
    if n < 3:
        raise DimensionError(f"need at least 3 points, got {n}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInputError("correlation undefined for constant input")
    r = float(np.dot(dx, dy)) / math.sqrt(sxx * syy)
    r = max(-1.0, min(1.0, r))
    df = n - 2
    if abs(r) == 1.0:
        return r, 0.0
    t2 = r * r * df / (1.0 - r * r)
    p = float(special.betainc(0.5 * df, 0.5, df / (df + t2)))
    return r, min(max(p, 0.0), 1.0)


def spearman(x, y):
    """Rank correlation (average ranks for ties)."""
    x, y = _pair(x, y)
    return pearson(rankdata(x), rankdata(y))[0]


def lower_envelope(errors, uncertainties, n_bins=20):
    """Minimum error within equal-width uncertainty bins.

    Returns a list of ``(bin_center, min_error)`` with empty bins omitted.
    """
    e, u = _pair(errors, uncertainties)
    if n_bins < 2:
        raise DimensionError("n_bins must be >= 2")
    lo, hi = float(u.min()), float(u.max())
    width = (hi - lo) / n_bins
    if width == 0.0:
        return [(lo, float(e.min()))]
    idx = np.minimum(((u - lo) / width).astype(int), n_bins - 1)
    out = []
    for b in range(n_bins):
        mask = idx == b
        if mask.any():
            out.append((lo + (b + 0.5) * width, float(e[mask].min())))
    return out
