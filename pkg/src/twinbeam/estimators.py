"""Per-batch photon statistics, bootstrap batching and summaries.

All variances use the unbiased ``n - 1`` convention, for Fano factors and for
the noise reduction factor ``R = Var(m_i - m_s) / (<m_i> + <m_s>)`` alike.
Batch statistics are computed from exact integer power sums, so a bootstrap
batch never materializes more than its index array and two gathers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ParameterError, UndefinedStatisticError

__all__ = [
    "BatchStats",
    "BatchTable",
    "StatSummary",
    "shot_arrays",
    "batch_stats",
    "r_standard_error",
    "bootstrap_batches",
    "bootstrap_table",
    "disjoint_batches",
    "summarize",
    "write_batch_csv",
]

BOOT_CHUNK = 32


@dataclass(frozen=True)
class BatchStats:
    mean_idler: float
    mean_signal: float
    fano_idler: float
    fano_signal: float
    R: float
    batch_size: int


@dataclass(frozen=True)
class StatSummary:
    """Mean and spread (sample standard deviation) of a statistic over batches."""

    mean: float
    std_error: float
    n_batches: int


@dataclass
class BatchTable:
    """Column-oriented batch statistics; row ``i`` is batch ``i``."""

    mean_idler: np.ndarray
    mean_signal: np.ndarray
    fano_idler: np.ndarray
    fano_signal: np.ndarray
    R: np.ndarray
    batch_size: int

    def __len__(self) -> int:
        return self.R.size

    def __getitem__(self, i) -> BatchStats:
        return BatchStats(
            float(self.mean_idler[i]), float(self.mean_signal[i]),
            float(self.fano_idler[i]), float(self.fano_signal[i]),
            float(self.R[i]), self.batch_size,
        )

    def rows(self) -> list[BatchStats]:
        return [self[i] for i in range(len(self))]

    def column(self, name: str) -> np.ndarray:
        if name == "batch_size" or name not in {f.name for f in fields(self)}:
            raise KeyError(name)
        return getattr(self, name)


def shot_arrays(shots) -> tuple[np.ndarray, np.ndarray]:
    """Idler and signal arrays from a Dataset, an ``(idler, signal)`` array pair
    given as a dict, or a sequence of ``(m_idler, m_signal)`` records."""
    if hasattr(shots, "m_idler") and hasattr(shots, "m_signal"):
        return np.asarray(shots.m_idler), np.asarray(shots.m_signal)
    arr = np.asarray(shots, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ParameterError("shots must be a Dataset or a sequence of (m_idler, m_signal) pairs")
    return arr[:, 0], arr[:, 1]


def _from_sums(n, sa, sb, saa, sbb, sab):
    n = np.asarray(n, dtype=float)
    sa, sb = np.asarray(sa, dtype=float), np.asarray(sb, dtype=float)
    mean_a, mean_b = sa / n, sb / n
    var_a = (np.asarray(saa, dtype=float) - sa * mean_a) / (n - 1)
    var_b = (np.asarray(sbb, dtype=float) - sb * mean_b) / (n - 1)
    cov = (np.asarray(sab, dtype=float) - sa * mean_b) / (n - 1)
    var_d = var_a + var_b - 2 * cov
    shot_noise = mean_a + mean_b
    with np.errstate(invalid="ignore", divide="ignore"):
        fano_a = var_a / mean_a
        fano_b = var_b / mean_b
        R = var_d / shot_noise
    return mean_a, mean_b, fano_a, fano_b, R, shot_noise


def _power_sums(a, b, axis=None):
    a = a.astype(np.int64, copy=False)
    b = b.astype(np.int64, copy=False)
    return a.sum(axis), b.sum(axis), (a * a).sum(axis), (b * b).sum(axis), (a * b).sum(axis)


def batch_stats(shots) -> BatchStats:
    """Means, Fano factors and noise reduction factor of one batch."""
    a, b = shot_arrays(shots)
    n = a.size
    if n < 2:
        raise UndefinedStatisticError(f"need at least 2 shots, got {n}")
    mean_a, mean_b, fano_a, fano_b, R, shot_noise = _from_sums(n, *_power_sums(a, b))
    if not shot_noise > 0:
        raise UndefinedStatisticError("shot-noise level <m_i> + <m_s> is zero; R undefined")
    return BatchStats(float(mean_a), float(mean_b), float(fano_a), float(fano_b), float(R), n)


def r_standard_error(shots) -> float:
    """Delta-method standard error of the batch ``R`` estimate.

    Uses the empirical influence function of ``Var(d) / (<m_i> + <m_s>)``
    with ``d = m_i - m_s``.
    """
    a, b = shot_arrays(shots)
    a = a.astype(float)
    b = b.astype(float)
    n = a.size
    if n < 3:
        raise UndefinedStatisticError("need at least 3 shots for a standard error")
    d = a - b
    s = a + b
    var_d = d.var(ddof=1)
    shot_noise = s.mean()
    if not shot_noise > 0:
        raise UndefinedStatisticError("shot-noise level is zero")
    infl = ((d - d.mean()) ** 2 - var_d) / shot_noise - var_d / shot_noise**2 * (s - shot_noise)
    return float(infl.std(ddof=1) / math.sqrt(n))


def _table_from_sums(sums, n) -> BatchTable:
    mean_a, mean_b, fano_a, fano_b, R, shot_noise = _from_sums(n, *sums)
    if np.any(~(shot_noise > 0)):
        raise UndefinedStatisticError("a batch has zero shot-noise level; R undefined")
    return BatchTable(mean_a, mean_b, fano_a, fano_b, R, int(n))


def _bootstrap_chunk(a, b, batch_size, n, seed, chunk, replace):
    g = rngmod.substream(seed, rngmod.BOOTSTRAP, chunk)
    if replace:
        idx = g.integers(0, a.size, size=(n, batch_size))
    else:
        idx = np.stack([g.choice(a.size, batch_size, replace=False) for _ in range(n)])
    return _power_sums(a[idx], b[idx], axis=1)


def bootstrap_table(
    dataset, batch_size: int, n_batches: int, rng, replace: bool = True, threads: int = 1
) -> BatchTable:
    """Bootstrap batches as columns.

    Each batch draws ``batch_size`` whole shots (idler and signal together)
    from the dataset, with replacement by default.  ``replace=False`` draws a
    random subset instead; with ``batch_size == len(dataset)`` that reproduces
    the whole-dataset statistics.  Results depend only on ``rng`` (seed),
    never on ``threads``.
    """
    a, b = shot_arrays(dataset)
    if a.size == 0:
        raise ParameterError("dataset is empty")
    if batch_size < 2:
        raise ParameterError(f"batch_size must be >= 2, got {batch_size}")
    if n_batches < 1:
        raise ParameterError(f"n_batches must be >= 1, got {n_batches}")
    if not replace and batch_size > a.size:
        raise ParameterError("batch_size exceeds dataset size for sampling without replacement")
    seed = rngmod.as_seed(rng)
    counts = [min(BOOT_CHUNK, n_batches - s) for s in range(0, n_batches, BOOT_CHUNK)]
    jobs = [(a, b, batch_size, c, seed, i, replace) for i, c in enumerate(counts)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda j: _bootstrap_chunk(*j), jobs))
    else:
        parts = [_bootstrap_chunk(*j) for j in jobs]
    sums = [np.concatenate([p[k] for p in parts]) for k in range(5)]
    return _table_from_sums(sums, batch_size)


def bootstrap_batches(
    dataset, batch_size: int, n_batches: int, rng, replace: bool = True, threads: int = 1
) -> list[BatchStats]:
    """List form of :func:`bootstrap_table`."""
    return bootstrap_table(dataset, batch_size, n_batches, rng, replace, threads).rows()


def disjoint_batches(dataset, n_batches: int) -> BatchTable:
    """Split the shots into ``n_batches`` consecutive equal batches (remainder dropped)."""
    a, b = shot_arrays(dataset)
    size = a.size // n_batches
    if n_batches < 1 or size < 2:
        raise ParameterError(f"cannot split {a.size} shots into {n_batches} batches of >= 2")
    a = a[: size * n_batches].reshape(n_batches, size)
    b = b[: size * n_batches].reshape(n_batches, size)
    return _table_from_sums(_power_sums(a, b, axis=1), size)


def summarize(stats, field: str = "R") -> StatSummary:
    """Mean and sample standard deviation of ``field`` across batches."""
    if isinstance(stats, BatchTable):
        values = stats.column(field)
    else:
        values = np.array([getattr(s, field) for s in stats], dtype=float)
    if values.size < 2:
        raise UndefinedStatisticError("need at least 2 batches to summarize")
    return StatSummary(float(values.mean()), float(values.std(ddof=1)), int(values.size))


def write_batch_csv(stats, path, comment: str | None = None) -> Path:
    """Export ``batch,mean_i,mean_s,fano_i,fano_s,R``."""
    rows = stats.rows() if isinstance(stats, BatchTable) else list(stats)
    path = Path(path)
    with path.open("w") as fh:
        if comment:
            fh.write(comment + "\n")
        fh.write("batch,mean_i,mean_s,fano_i,fano_s,R\n")
        for i, s in enumerate(rows):
            fh.write(f"{i},{s.mean_idler:.10g},{s.mean_signal:.10g},"
                     f"{s.fano_idler:.10g},{s.fano_signal:.10g},{s.R:.10g}\n")
    return path
