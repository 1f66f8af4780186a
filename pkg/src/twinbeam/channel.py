"""Lossy detection channel for twin beams with superimposed thermal noise.

Alice detects the idler arm with efficiency ``eta``; Bob detects the signal
arm with efficiency ``eta * t`` and, on top of it, one of two thermal noise
signals that encode the bit.  Noise parameters are given in detected photons.
See ``docs/noise_reduction_derivation.md`` for why this binomial-thinning
model reproduces :func:`predict_R` term by term.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ParameterError
from .sources import SourceParams, sample_multimode_thermal, sample_twb_incident

__all__ = [
    "ChannelParams",
    "ShotRecord",
    "Dataset",
    "detect",
    "generate_dataset",
    "predict_R",
    "max_noise_for_nonclassicality",
    "fano_detected",
    "fit_efficiency",
    "calibrate_modes",
    "estimate_transmission",
]

CHUNK_SHOTS = 1 << 17
NO_NOISE = SourceParams(0.0, 1.0)


@dataclass(frozen=True)
class ChannelParams:
    """Detection efficiency, signal-arm imbalance, twin-beam and noise sources.

    ``twb`` is the incident marginal (mean ``<n>`` photons, ``modes`` mu);
    ``noise0``/``noise1`` are the detected-photon noise signals for bit 0/1.
    """

    eta: float
    t: float
    twb: SourceParams
    noise0: SourceParams = NO_NOISE
    noise1: SourceParams = NO_NOISE

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ParameterError(f"eta must be in (0, 1], got {self.eta}")
        if not 0 < self.t <= 1:
            raise ParameterError(f"t must be in (0, 1], got {self.t}")

    @classmethod
    def from_detected(
        cls,
        mean_idler: float,
        eta: float,
        t: float,
        modes: float,
        noise_means: Sequence[float] = (0.0, 0.0),
        noise_modes: float = 1.0,
    ) -> "ChannelParams":
        """Build parameters from the detected idler mean instead of ``<n>``."""
        if eta <= 0:
            raise ParameterError(f"eta must be in (0, 1], got {eta}")
        return cls(
            eta=eta,
            t=t,
            twb=SourceParams(mean_idler / eta, modes),
            noise0=SourceParams(noise_means[0], noise_modes),
            noise1=SourceParams(noise_means[1], noise_modes),
        )

    def noise(self, bit) -> SourceParams:
        if bit is None:
            return NO_NOISE
        if bit == 0:
            return self.noise0
        if bit == 1:
            return self.noise1
        raise ParameterError(f"bit must be 0, 1 or None, got {bit!r}")

    @property
    def mean_idler(self) -> float:
        return self.eta * self.twb.mean

    def mean_signal(self, bit=None) -> float:
        """Expected Bob count: transmitted twin photons plus noise."""
        return self.eta * self.t * self.twb.mean + self.noise(bit).mean

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelParams":
        return cls(
            eta=d["eta"],
            t=d["t"],
            twb=SourceParams(**d["twb"]),
            noise0=SourceParams(**d["noise0"]),
            noise1=SourceParams(**d["noise1"]),
        )


class ShotRecord(NamedTuple):
    m_idler: int
    m_signal: int


@dataclass
class Dataset:
    """Detected counts of one run; ``bit`` is ``None`` for a noiseless channel."""

    m_idler: np.ndarray
    m_signal: np.ndarray
    bit: int | None
    params: ChannelParams
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.m_idler = np.asarray(self.m_idler, dtype=np.int64)
        self.m_signal = np.asarray(self.m_signal, dtype=np.int64)
        if self.m_idler.shape != self.m_signal.shape or self.m_idler.ndim != 1:
            raise ParameterError("idler and signal arrays must be 1-D and of equal length")
        if self.m_idler.size == 0:
            raise ParameterError("dataset must contain at least one shot")
        if self.bit not in (0, 1, None):
            raise ParameterError(f"bit must be 0, 1 or None, got {self.bit!r}")

    def __len__(self) -> int:
        return self.m_idler.size

    def __getitem__(self, i) -> ShotRecord:
        return ShotRecord(int(self.m_idler[i]), int(self.m_signal[i]))

    def __iter__(self):
        for a, b in zip(self.m_idler.tolist(), self.m_signal.tolist()):
            yield ShotRecord(a, b)

    @property
    def true_mean_signal(self) -> float:
        return self.params.mean_signal(self.bit)

    def to_csv(self, path, comment: str | None = None) -> Path:
        """Write ``shot,m_idler,m_signal`` and a JSON sidecar with params/bit/seed."""
        path = Path(path)
        table = np.column_stack([np.arange(len(self)), self.m_idler, self.m_signal])
        header = "shot,m_idler,m_signal"
        if comment:
            header = f"{comment}\n{header}"
        np.savetxt(path, table, fmt="%d", delimiter=",", header=header, comments="")
        sidecar = {"params": self.params.to_dict(), "bit": self.bit, "seed": self.seed, **self.meta}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        with path.open() as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
        if not lines or lines[0].strip() != "shot,m_idler,m_signal":
            raise ParameterError(f"{path}: missing 'shot,m_idler,m_signal' header")
        table = np.loadtxt(lines[1:], delimiter=",", dtype=np.int64, ndmin=2)
        meta = {k: v for k, v in sidecar.items() if k not in ("params", "bit", "seed")}
        return cls(
            table[:, 1], table[:, 2], sidecar["bit"],
            ChannelParams.from_dict(sidecar["params"]), sidecar["seed"], meta,
        )


def detect(n, efficiency: float, rng: np.random.Generator):
    """Binomial thinning of ``n`` incident photons."""
    if not 0 <= efficiency <= 1:
        raise ParameterError(f"efficiency must be in [0, 1], got {efficiency}")
    return rng.binomial(n, efficiency)


def _generate_chunk(params: ChannelParams, bit, seed: int, chunk: int, size: int):
    # twin-beam, thinning and noise each get their own stream so datasets for
    # bit 0 and bit 1 with the same seed share everything except the noise
    n, _ = sample_twb_incident(params.twb, rngmod.substream(seed, rngmod.TWB, chunk), size)
    m_idler = detect(n, params.eta, rngmod.substream(seed, rngmod.IDLER, chunk))
    m_signal = detect(n, params.eta * params.t, rngmod.substream(seed, rngmod.SIGNAL, chunk))
    noise = params.noise(bit)
    if noise.mean > 0:
        m_signal = m_signal + sample_multimode_thermal(
            noise, rngmod.substream(seed, rngmod.NOISE, chunk), size
        )
    return m_idler, m_signal


def generate_dataset(
    params: ChannelParams, bit, n_shots: int, seed: int, threads: int = 1
) -> Dataset:
    """Simulate ``n_shots`` detected shot pairs.

    Output is bit-identical for a given ``(params, bit, n_shots, seed)``
    regardless of ``threads``.
    """
    if int(n_shots) != n_shots or n_shots < 1:
        raise ParameterError(f"n_shots must be a positive integer, got {n_shots}")
    params.noise(bit)
    seed = rngmod.as_seed(seed)
    sizes = [min(CHUNK_SHOTS, n_shots - s) for s in range(0, n_shots, CHUNK_SHOTS)]
    jobs = [(params, bit, seed, i, size) for i, size in enumerate(sizes)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda j: _generate_chunk(*j), jobs))
    else:
        parts = [_generate_chunk(*j) for j in jobs]
    m_idler = np.concatenate([p[0] for p in parts])
    m_signal = np.concatenate([p[1] for p in parts])
    return Dataset(m_idler, m_signal, bit, params, seed)


def _shot_noise(mean_idler, t, noise_mean):
    return (1 + t) * mean_idler + noise_mean


def predict_R(mean_idler: float, params: ChannelParams, bit=None) -> float:
    """Closed-form noise reduction factor of the lossy, noisy channel.

    ``mean_idler`` is the detected idler mean; the twin part of the signal arm
    has mean ``t * mean_idler``.  ``bit=None`` means no noise.
    """
    if mean_idler <= 0:
        raise ParameterError("mean_idler must be > 0")
    noise = params.noise(bit)
    eta, t, mu = params.eta, params.t, params.twb.modes
    mN, muN = noise.mean, noise.modes
    denom = _shot_noise(mean_idler, t, mN)
    if denom == 0:
        raise ParameterError("shot-noise level is zero")
    return (
        1.0
        - 2 * eta * t * mean_idler / denom
        + (1 - t) ** 2 * mean_idler**2 / (mu * denom)
        + mN**2 / (muN * denom)
    )


def max_noise_for_nonclassicality(
    mean_idler: float, params: ChannelParams, noise_modes: float | None = None
) -> float | None:
    """Largest noise mean that still leaves ``R < 1``.

    Returns ``None`` when losses alone already prevent ``R < 1``.  The noise
    mode number defaults to that of ``params.noise0``.
    """
    muN = params.noise0.modes if noise_modes is None else noise_modes
    eta, t, mu = params.eta, params.t, params.twb.modes
    loss_term = 0.0 if math.isinf(mu) else (1 - t) ** 2 * mean_idler / mu
    radicand = 2 * eta * t - loss_term
    if radicand < 0:
        return None
    return math.sqrt(muN * radicand * mean_idler)


def fano_detected(fano_incident: float, eta: float) -> float:
    """Fano factor after binomial detection: ``eta * F(n) + 1 - eta``."""
    if fano_incident < 0 or not 0 <= eta <= 1:
        raise ParameterError("need fano_incident >= 0 and 0 <= eta <= 1")
    return eta * fano_incident + 1 - eta


def _eta_design(mean_idlers, t, modes, noise_mean, noise_modes):
    # R = offset - eta * slope, elementwise
    m = np.asarray(mean_idlers, dtype=float)
    denom = _shot_noise(m, t, noise_mean)
    mode_term = 0.0 if math.isinf(modes) else (1 - t) ** 2 * m**2 / (modes * denom)
    offset = 1 + mode_term + noise_mean**2 / (noise_modes * denom)
    slope = 2 * t * m / denom
    return offset, slope


def fit_efficiency(
    mean_idlers,
    R_values,
    t: float = 1.0,
    modes: float = math.inf,
    noise_mean: float = 0.0,
    noise_modes: float = 1.0,
    R_errors=None,
) -> tuple[float, float]:
    """Least-squares detection efficiency from measured ``R`` values.

    ``R`` is affine in ``eta`` at fixed ``t``, ``mu`` and noise, so the fit is
    closed form.  Returns ``(eta, std_error)``; the error is propagated from
    ``R_errors`` when given, otherwise taken from the residual scatter (NaN
    for a single point).
    """
    R = np.asarray(R_values, dtype=float)
    offset, slope = _eta_design(mean_idlers, t, modes, noise_mean, noise_modes)
    offset, slope = np.broadcast_to(offset, R.shape), np.broadcast_to(slope, R.shape)
    w = np.ones_like(R) if R_errors is None else 1.0 / np.asarray(R_errors, dtype=float) ** 2
    sxx = np.sum(w * slope**2)
    eta = float(np.sum(w * slope * (offset - R)) / sxx)
    if R_errors is not None:
        err = float(1 / math.sqrt(sxx))
    elif R.size > 1:
        resid = offset - eta * slope - R
        err = float(math.sqrt(np.sum(resid**2) / (R.size - 1) / sxx))
    else:
        err = math.nan
    return eta, err


def calibrate_modes(
    mean_idler: float,
    eta: float,
    t: float,
    noise_means: Sequence[float],
    measured_R: Sequence[float],
    noise_modes: float = 1.0,
) -> float:
    """Twin-beam mode number minimizing the squared error of :func:`predict_R`.

    ``R`` is affine in ``1/mu``, so the least-squares solution is closed form.
    """
    mN = np.asarray(noise_means, dtype=float)
    y = np.asarray(measured_R, dtype=float)
    denom = _shot_noise(mean_idler, t, mN)
    base = 1 - 2 * eta * t * mean_idler / denom + mN**2 / (noise_modes * denom)
    coef = (1 - t) ** 2 * mean_idler**2 / denom
    if not np.any(coef > 0):
        raise ParameterError("mode number does not affect R for a balanced channel (t = 1)")
    inv_mu = float(np.sum(coef * (y - base)) / np.sum(coef**2))
    if inv_mu <= 0:
        raise ParameterError("measured R values imply no finite positive mode number")
    return 1.0 / inv_mu


def estimate_transmission(mean_signal: float, mean_idler: float, noise_mean: float = 0.0) -> float:
    """Signal/idler imbalance from detected means, noise removed."""
    if mean_idler <= 0:
        raise ParameterError("mean_idler must be > 0")
    return (mean_signal - noise_mean) / mean_idler
