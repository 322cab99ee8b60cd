"""Homodyned-K envelope model: sampling, density, and Rayleigh noise.

Parameterization follows the compound generator

    a = | sqrt(2k)*sigma + (X + iY) * sigma * sqrt(Z / alpha) |,
    X, Y ~ N(0, 1),  Z ~ Gamma(alpha, 1),

so the coherent amplitude is ``eps = sqrt(2k) * sigma`` and, conditionally on
``Z = z``, the amplitude is Rician with per-component variance
``sigma**2 * z / alpha``. The density integrates that Rician kernel against
the Gamma mixing law; the oscillatory Bessel-product integral is kept only as
a cross-check (:func:`evaluate_pdf_bessel`).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate, special

from hkq.errors import (
    DegenerateInputError,
    EmptySetError,
    NumericalAccuracyError,
    ParameterDomainError,
)
from hkq.rng import MASK64, stream

PDF_NODES = 128
PDF_TOLERANCE = 1e-2
# Mixing-law tail mass left out of the log-z quadrature range, per side.
_TAIL = 1e-16


@dataclass(frozen=True)
class HkParams:
    alpha: float
    k: float
    sigma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "k", "sigma"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ParameterDomainError(f"{name} must be finite, got {value}")
        if self.alpha <= 0:
            raise ParameterDomainError(f"alpha must be > 0, got {self.alpha}")
        if self.k < 0:
            raise ParameterDomainError(f"k must be >= 0, got {self.k}")
        if self.sigma <= 0:
            raise ParameterDomainError(f"sigma must be > 0, got {self.sigma}")

    @property
    def log10_alpha(self):
        return math.log10(self.alpha)

    @property
    def coherent_amplitude(self):
        return math.sqrt(2.0 * self.k) * self.sigma


class Source(str, enum.Enum):
    SIMULATED = "simulated"
    INGESTED = "ingested"


@dataclass(frozen=True)
class EnvelopeSet:
    """One realization of envelope amplitudes plus where it came from."""

    samples: np.ndarray
    truth: HkParams | None = None
    seed: int | None = None
    snr_db: float | None = None
    source: Source = Source.SIMULATED
    label: str | None = field(default=None, compare=False)

    def __post_init__(self):
        samples = np.array(self.samples, dtype=np.float64).ravel()
        if samples.size == 0:
            raise EmptySetError("envelope set has no samples")
        if not np.all(np.isfinite(samples)):
            raise ParameterDomainError("envelope samples must be finite")
        if np.any(samples < 0):
            raise ParameterDomainError("envelope samples must be non-negative")
        samples.flags.writeable = False
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "source", Source(self.source))
        if self.source is Source.SIMULATED and (self.truth is None or self.seed is None):
            raise ParameterDomainError("simulated sets must carry truth and seed")
        if self.seed is not None and not 0 <= int(self.seed) <= MASK64:
            raise ParameterDomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def __eq__(self, other):
        if not isinstance(other, EnvelopeSet):
            return NotImplemented
        return (
            np.array_equal(self.samples, other.samples)
            and self.truth == other.truth
            and self.seed == other.seed
            and self.snr_db == other.snr_db
            and self.source == other.source
        )

    __hash__ = None

    def __len__(self):
        return self.samples.size

    @property
    def power(self):
        """Empirical power E[env^2]."""
        return float(np.mean(self.samples**2))


# -- Gamma sampling ---------------------------------------------------------


def _gamma_unit(shape, n, rng):
    """Marsaglia-Tsang squeeze/rejection draws of Gamma(shape, 1).

    Shapes below one are boosted: draw at ``shape + 1`` and multiply by
    ``U**(1/shape)``.
    """
    boost = shape < 1.0
    d = (shape + 1.0 if boost else shape) - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    out = np.empty(n)
    filled = 0
    while filled < n:
        # Acceptance is > 95 % for every shape, so a small surplus suffices.
        m = int((n - filled) * 1.06) + 16
        x = rng.standard_normal(m)
        u = rng.random(m)
        v = 1.0 + c * x
        ok = v > 0
        v = np.where(ok, v, 1.0) ** 3
        with np.errstate(divide="ignore"):
            accept = ok & (
                (u < 1.0 - 0.0331 * x**4)
                | (np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)))
            )
        got = (d * v)[accept][: n - filled]
        out[filled : filled + got.size] = got
        filled += got.size
    if boost:
        out *= rng.random(n) ** (1.0 / shape)
    return out


def sample_gamma(shape, scale, n, seed):
    """Draw ``n`` i.i.d. Gamma(shape, scale) variates, deterministic per seed."""
    if not shape > 0 or not scale > 0:
        raise ParameterDomainError(f"Gamma shape and scale must be > 0, got {shape}, {scale}")
    if n < 1:
        raise EmptySetError("n must be >= 1")
    return scale * _gamma_unit(float(shape), int(n), stream(seed))


# -- HK sampling --------------------------------------------------------------


def sample_hk(params, n, seed):
    """Simulate one HK envelope set of ``n`` amplitudes."""
    if n < 1:
        raise EmptySetError("n must be >= 1")
    rng = stream(seed)
    z = _gamma_unit(params.alpha, int(n), rng)
    x = rng.standard_normal(n)
    y = rng.standard_normal(n)
    diffuse = params.sigma * np.sqrt(z / params.alpha)
    a = np.hypot(params.coherent_amplitude + x * diffuse, y * diffuse)
    return EnvelopeSet(samples=a, truth=params, seed=int(seed), source=Source.SIMULATED)


def second_moment(params):
    """Closed-form E[A^2] = 2*k*sigma^2 + 2*sigma^2 (E[Z]/alpha = 1)."""
    return 2.0 * params.k * params.sigma**2 + 2.0 * params.sigma**2


# -- Density ------------------------------------------------------------------


def _log_i0e(x):
    """log of the exponentially scaled Bessel I0, safe for huge arguments."""
    x = np.asarray(x, dtype=np.float64)
    big = x > 1e8
    small = np.log(special.i0e(np.where(big, 0.0, x)))
    xb = np.where(big, x, 1.0)
    asym = -0.5 * np.log(2.0 * np.pi * xb) + np.log1p(1.0 / (8.0 * xb))
    return np.where(big, asym, small)


def _mixing_nodes(alpha, n):
    """Gauss-Legendre nodes in u = ln z carrying the Gamma(alpha, 1) weights."""
    lo = math.log(max(special.gammaincinv(alpha, _TAIL), 1e-300))
    hi = math.log(special.gammainccinv(alpha, _TAIL))
    x, w = leggauss(n)
    half = 0.5 * (hi - lo)
    u = half * x + 0.5 * (hi + lo)
    weights = half * w * np.exp(alpha * u - np.exp(u) - special.gammaln(alpha))
    return u, weights


def _log_rice(a, nu, log_s2):
    s2 = np.exp(log_s2)
    with np.errstate(divide="ignore"):
        return np.log(a) - log_s2 - (a - nu) ** 2 / (2.0 * s2) + _log_i0e(a * nu / s2)


def _pdf_nodes(params, a, n):
    u, w = _mixing_nodes(params.alpha, n)
    log_s2 = 2.0 * math.log(params.sigma) + u - math.log(params.alpha)
    kernel = np.exp(_log_rice(a[:, None], params.coherent_amplitude, log_s2[None, :]))
    return kernel @ w


def evaluate_pdf(params, a, nodes=PDF_NODES, tol=PDF_TOLERANCE):
    """HK density at amplitude(s) ``a`` by Gamma-mixture-of-Rice quadrature.

    The mixture is integrated with ``nodes`` and ``2 * nodes`` Gauss-Legendre
    points in log z; the finer value is returned. If the two disagree by more
    than ``tol`` (relative) at any point, :class:`NumericalAccuracyError` is
    raised carrying the largest relative change.
    """
    a_arr = np.atleast_1d(np.asarray(a, dtype=np.float64))
    if np.any(a_arr < 0) or not np.all(np.isfinite(a_arr)):
        raise ParameterDomainError("amplitudes must be finite and >= 0")
    coarse = _pdf_nodes(params, a_arr, nodes)
    fine = _pdf_nodes(params, a_arr, 2 * nodes)
    # Relative change, floored at a millionth of the peak so far tails (where
    # both rules underflow together) cannot dominate.
    floor = 1e-6 * float(np.max(fine, initial=0.0))
    scale = np.maximum(np.abs(fine), max(floor, 1e-300))
    residual = float(np.max(np.abs(fine - coarse) / scale, initial=0.0))
    if residual > tol:
        raise NumericalAccuracyError("HK density quadrature did not converge", residual)
    return fine if np.ndim(a) else float(fine[0])


def hk_cdf(params, a, grid_points=1 << 15, nodes=PDF_NODES):
    """CDF from cumulative trapezoid integration of the quadrature density.

    The density is tabulated over ``[0, 10 * sqrt(E[A^2])]`` and the running integral is linearly interpolated at ``a``.
    """
    a_arr = np.atleast_1d(np.asarray(a, dtype=np.float64))
    a_max = 10.0 * math.sqrt(second_moment(params))
    # Geometric spacing resolves the integrable singularity near zero at small alpha.
    grid = np.unique(
        np.concatenate(
            [
                [0.0],
                np.geomspace(1e-9 * a_max, a_max, grid_points // 2),
                np.linspace(0.0, a_max, grid_points // 2),
            ]
        )
    )
    density = _pdf_nodes(params, grid, nodes)
    running = integrate.cumulative_trapezoid(density, grid, initial=0.0)
    cdf = np.clip(np.interp(a_arr, grid, running, right=1.0), 0.0, 1.0)
    return cdf if np.ndim(a) else float(cdf[0])


def evaluate_pdf_bessel(params, a, u_max=200.0):
    """Direct evaluation of the Bessel-product integral, truncated at ``u_max``.

    Uses the diffuse scale of the integral representation,
    ``s**2 = sigma**2 / alpha``, so that ``2 * s**2 * alpha = 2 * sigma**2``.
    Slow and only accurate when the characteristic function decays fast
    (moderate-to-large alpha); meant as a cross-check.
    """
    eps = params.coherent_amplitude
    s2 = params.sigma**2 / params.alpha

    def integrand(u):
        return u * special.j0(u * eps) * special.j0(u * a) * (1.0 + u * u * s2 / 2.0) ** (-params.alpha)

    value, _ = integrate.quad(integrand, 0.0, u_max, limit=2000)
    return a * value


# -- Rayleigh noise -------------------------------------------------------------


def noise_sigma(power, snr_db):
    """Rayleigh scale giving SNR = 10 log10(power / (2 sigma_N^2))."""
    return math.sqrt(power / (2.0 * 10.0 ** (snr_db / 10.0)))


def _rayleigh_phasor(n, sigma_n, seed):
    rng = stream(seed)
    r = rng.rayleigh(1.0, n) * sigma_n
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    return r, theta


def add_rayleigh_noise(env, snr_db, seed):
    """Combine each amplitude with a Rayleigh-amplitude, uniform-phase phasor.

    The noise scale is calibrated on the clean set's empirical power.
    """
    if not math.isfinite(snr_db):
        raise ParameterDomainError(f"snr_db must be finite, got {snr_db}")
    power = env.power
    if power == 0.0:
        raise DegenerateInputError("cannot calibrate noise on a zero-power set")
    r, theta = _rayleigh_phasor(len(env), noise_sigma(power, snr_db), seed)
    noisy = np.hypot(env.samples + r * np.cos(theta), r * np.sin(theta))
    return EnvelopeSet(
        samples=noisy,
        truth=env.truth,
        seed=env.seed,
        snr_db=float(snr_db),
        source=env.source,
        label=env.label,
    )
