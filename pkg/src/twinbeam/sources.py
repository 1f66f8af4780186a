"""Photon-number laws for multi-mode thermal, twin-beam and Poissonian light.

The multi-mode thermal distribution with mean ``<m>`` and effective mode
number ``mu`` is the negative binomial law with shape ``mu``::

    P(m) = Gamma(m + mu) / (m! Gamma(mu))
           * (1 + <m>/mu)**(-mu) * (1 + mu/<m>)**(-m)

Its Fano factor is ``1 + <m>/mu``; ``mu -> inf`` recovers Poissonian light and
``mu = 1`` is single-mode (geometric) thermal light.  ``modes`` may be any
positive real, including ``math.inf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlog1py

from .errors import NotSuperPoissonianError, ParameterError

__all__ = [
    "SourceParams",
    "pmf_multimode_thermal",
    "pmf_support",
    "fano_multimode_thermal",
    "sample_multimode_thermal",
    "sample_twb_incident",
    "sample_poisson",
    "fit_modes_by_moments",
]

# above this mode number the PMF uses the cancellation-free product form
LARGE_MODES = 1e3


@dataclass(frozen=True)
class SourceParams:
    """Mean photon number per shot and effective number of modes."""

    mean: float
    modes: float = 1.0

    def __post_init__(self):
        if not (self.mean >= 0 and math.isfinite(self.mean)):
            raise ParameterError(f"mean must be finite and >= 0, got {self.mean}")
        if not self.modes > 0:
            raise ParameterError(f"modes must be > 0, got {self.modes}")

    @property
    def variance(self) -> float:
        return self.mean + self.mean**2 / self.modes

    @property
    def fano(self) -> float:
        return fano_multimode_thermal(self)


def fano_multimode_thermal(params: SourceParams) -> float:
    """Variance-to-mean ratio ``1 + <m>/mu``."""
    return 1.0 + params.mean / params.modes


def pmf_multimode_thermal(m, params: SourceParams):
    """Probability of ``m`` photons; ``m`` may be a scalar or an array."""
    m_arr = np.asarray(m)
    if np.any(m_arr < 0):
        raise ParameterError("photon count must be >= 0")
    k = m_arr.astype(float)
    mean, mu = params.mean, params.modes
    if mean == 0:
        out = np.where(k == 0, 1.0, 0.0)
    elif math.isinf(mu):
        out = np.exp(k * math.log(mean) - mean - gammaln(k + 1))
    elif mu > LARGE_MODES:
        out = np.exp(_log_pmf_large_modes(m_arr, mean, mu))
    else:
        logp = (
            gammaln(k + mu)
            - gammaln(k + 1)
            - gammaln(mu)
            - mu * math.log1p(mean / mu)
            - xlog1py(k, mu / mean)
        )
        out = np.exp(logp)
    return float(out) if np.ndim(out) == 0 else out


def _log_pmf_large_modes(m_arr, mean, mu):
    # gammaln(k + mu) - gammaln(mu) loses ~eps * mu * log(mu) to cancellation;
    # write Gamma(k + mu) / (Gamma(mu) mu^k) as prod_j (1 + j/mu) instead
    m_int = m_arr.astype(np.int64)
    kmax = int(m_int.max()) if m_int.size else 0
    log_rising = np.concatenate([[0.0], np.cumsum(np.log1p(np.arange(kmax) / mu))])
    k = m_int.astype(float)
    return (
        log_rising[m_int]
        + k * math.log(mean)
        - gammaln(k + 1)
        - (mu + k) * math.log1p(mean / mu)
    )


def pmf_support(params: SourceParams, tail: float = 1e-12) -> int:
    """Smallest cutoff ``M`` (from a doubling search) with mass beyond ``M`` below ``tail``.

    Starts at ``mean + 30 sd`` and doubles until ``1 - sum_{m<=M} P(m) < tail``.
    """
    cutoff = max(int(math.ceil(params.mean + 30 * math.sqrt(params.variance))), 10)
    while True:
        mass = pmf_multimode_thermal(np.arange(cutoff + 1), params).sum()
        if 1.0 - mass < tail:
            return cutoff
        cutoff *= 2


def sample_multimode_thermal(params: SourceParams, rng: np.random.Generator, size=None):
    """Draw photon counts by the gamma-Poisson mixture.

    The intensity is gamma distributed with shape ``mu`` and mean ``<m>``, the
    count is Poisson given the intensity.  This is the negative binomial law
    exactly and works for non-integer ``mu``.
    """
    if params.mean == 0:
        return 0 if size is None else np.zeros(size, dtype=np.int64)
    if math.isinf(params.modes):
        return rng.poisson(params.mean, size)
    intensity = rng.gamma(params.modes, params.mean / params.modes, size)
    return rng.poisson(intensity)


def sample_twb_incident(params: SourceParams, rng: np.random.Generator, size=None):
    """Draw incident photon numbers ``(n, n)`` of a twin beam.

    The twin-beam state is diagonal in the pair basis ``|n, n>``, so a single
    multi-mode thermal draw fixes both arms.
    """
    n = sample_multimode_thermal(params, rng, size)
    return n, (n.copy() if isinstance(n, np.ndarray) else n)


def sample_poisson(mean: float, rng: np.random.Generator, size=None):
    if not (mean >= 0 and math.isfinite(mean)):
        raise ParameterError(f"Poisson mean must be finite and >= 0, got {mean}")
    return rng.poisson(mean, size)


def fit_modes_by_moments(samples) -> SourceParams:
    """Moment-matched multi-mode thermal parameters for a set of counts.

    Uses the unbiased sample variance; ``modes = mean**2 / (var - mean)``.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ParameterError("need at least 2 samples to fit")
    mean = x.mean()
    var = x.var(ddof=1)
    if var <= mean:
        raise NotSuperPoissonianError(
            f"sample variance {var:.6g} <= mean {mean:.6g}; multi-mode thermal fit undefined"
        )
    return SourceParams(mean=float(mean), modes=float(mean**2 / (var - mean)))
