"""Intercept-resend eavesdropping on Bob's arm and its signature in ``R``.

Eve takes ``d_E`` shots of a ``d_b``-shot batch and resends Poissonian light of
the same mean in their place.  Bob's mean is unchanged, but the resent shots
carry no correlation with Alice's idler, so ``R`` grows linearly with
``d_E / d_b``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .channel import Dataset, ShotRecord
from .errors import ParameterError
from .estimators import _from_sums, batch_stats, shot_arrays

__all__ = [
    "AttackParams",
    "SweepPoint",
    "intercept_resend",
    "attack_sweep",
    "detect_attack",
    "linear_fit",
    "crossing_fraction",
    "write_sweep_csv",
]

RESEND_MODES = ("exact", "estimated")
SWEEP_CHUNK = 16


@dataclass(frozen=True)
class AttackParams:
    """Intercepted fraction ``d_E / d_b`` and how Eve sets the resend mean.

    ``exact``: Eve knows the true mean of Bob's light.  ``estimated``: she
    uses the empirical mean of the shots she intercepted.
    """

    fraction: float
    resend_mean_mode: str = "exact"
    resend_law: str = "poisson"

    def __post_init__(self):
        if not 0 <= self.fraction <= 1:
            raise ParameterError(f"fraction must be in [0, 1], got {self.fraction}")
        if self.resend_mean_mode not in RESEND_MODES:
            raise ParameterError(f"resend_mean_mode must be one of {RESEND_MODES}")
        if self.resend_law != "poisson":
            raise ParameterError(f"unsupported resend law {self.resend_law!r}")

    def n_intercepted(self, batch_size: int) -> int:
        return int(math.floor(self.fraction * batch_size + 0.5))


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    R_mean: float
    R_std: float
    flag_rate: float
    mean_signal: float
    mean_signal_std: float
    n_realizations: int


def intercept_resend(shots, attack: AttackParams, rng: np.random.Generator, true_mean=None):
    """Replace Bob's count on a random subset of shots by Poissonian resends.

    Returns a Dataset when given one (the resend mean then defaults to the
    channel's true signal+noise mean), otherwise a list of ShotRecord.  Idler
    counts are never touched.
    """
    a, b = shot_arrays(shots)
    k = attack.n_intercepted(a.size)
    b_new = np.array(b, dtype=np.int64, copy=True)
    if k:
        pos = rng.choice(a.size, k, replace=False)
        if attack.resend_mean_mode == "exact":
            if true_mean is None:
                if not isinstance(shots, Dataset):
                    raise ParameterError("exact resend mode needs true_mean for raw shot lists")
                true_mean = shots.true_mean_signal
            lam = float(true_mean)
        else:
            lam = float(b[pos].mean())
        b_new[pos] = rng.poisson(lam, k)
    if isinstance(shots, Dataset):
        return replace(shots, m_signal=b_new, meta={**shots.meta, "attack_fraction": attack.fraction})
    return [ShotRecord(int(x), int(y)) for x, y in zip(a.tolist(), b_new.tolist())]


def detect_attack(R: float, R_ref: float, sigma: float, k: float = 2.0) -> bool:
    """True when ``R`` lies more than ``k`` sigma above the reference."""
    if sigma <= 0:
        raise ParameterError("sigma must be > 0")
    return bool(R > R_ref + k * sigma)


def _sweep_chunk(a, b, fractions, batch_size, n, seed, chunk, mode, lam):
    g_idx = rngmod.substream(seed, rngmod.ATTACK, chunk, 0)
    idx = g_idx.integers(0, a.size, size=(n, batch_size))
    A = a[idx]
    B = b[idx]
    sa, saa = A.sum(1), (A * A).sum(1)
    sb, sbb, sab = B.sum(1), (B * B).sum(1), (A * B).sum(1)
    if mode == "exact":
        # one resend draw shared by all fractions (common random numbers)
        Rs = rngmod.substream(seed, rngmod.ATTACK, chunk, 1).poisson(lam, size=(n, batch_size))
    out_R, out_ms = [], []
    for fi, f in enumerate(fractions):
        k = AttackParams(f).n_intercepted(batch_size)
        # bootstrap positions are i.i.d., so the first k are a uniform random subset
        Bk, Ak = B[:, :k], A[:, :k]
        if mode == "exact":
            Rk = Rs[:, :k]
        elif k:
            g = rngmod.substream(seed, rngmod.ATTACK, chunk, 2, fi)
            Rk = g.poisson(Bk.mean(1)[:, None], size=(n, k))
        else:
            Rk = Bk
        sb_f = sb - Bk.sum(1) + Rk.sum(1)
        sbb_f = sbb - (Bk * Bk).sum(1) + (Rk * Rk).sum(1)
        sab_f = sab - (Ak * Bk).sum(1) + (Ak * Rk).sum(1)
        _, mean_b, _, _, R, _ = _from_sums(batch_size, sa, sb_f, saa, sbb_f, sab_f)
        out_R.append(R)
        out_ms.append(mean_b)
    return np.array(out_R), np.array(out_ms)


def attack_sweep(
    dataset,
    fractions: Sequence[float],
    batch_size: int,
    n_realizations: int,
    rng,
    resend_mean_mode: str = "exact",
    R_ref: float | None = None,
    sigma_flag: float | None = None,
    k: float = 2.0,
    threads: int = 1,
) -> list[SweepPoint]:
    """``R`` of attacked bootstrap batches as a function of the intercepted fraction.

    Every realization draws a fresh batch of ``batch_size`` shots from the
    dataset and attacks it at each fraction.  ``flag_rate`` is the share of
    realizations with ``R > R_ref + k * sigma_flag``; by default ``R_ref`` is
    the whole-dataset ``R`` and ``sigma_flag`` the spread of unattacked batches.
    """
    fractions = [float(f) for f in fractions]
    if not fractions:
        raise ParameterError("fraction grid is empty")
    for f in fractions:
        AttackParams(f, resend_mean_mode)
    if batch_size < 2 or n_realizations < 2:
        raise ParameterError("need batch_size >= 2 and n_realizations >= 2")
    a, b = shot_arrays(dataset)
    lam = None
    if resend_mean_mode == "exact":
        if not isinstance(dataset, Dataset):
            raise ParameterError("exact resend mode needs a Dataset with known parameters")
        lam = dataset.true_mean_signal
    seed = rngmod.as_seed(rng)
    grid = sorted(set(fractions) | {0.0})
    counts = [min(SWEEP_CHUNK, n_realizations - s) for s in range(0, n_realizations, SWEEP_CHUNK)]
    jobs = [(a, b, grid, batch_size, c, seed, i, resend_mean_mode, lam) for i, c in enumerate(counts)]
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(lambda j: _sweep_chunk(*j), jobs))
    else:
        parts = [_sweep_chunk(*j) for j in jobs]
    R_all = np.concatenate([p[0] for p in parts], axis=1)
    ms_all = np.concatenate([p[1] for p in parts], axis=1)
    if R_ref is None:
        R_ref = batch_stats(dataset).R
    if sigma_flag is None:
        sigma_flag = float(R_all[grid.index(0.0)].std(ddof=1))
    points = []
    for f in fractions:
        i = grid.index(f)
        R = R_all[i]
        points.append(
            SweepPoint(
                fraction=f,
                R_mean=float(R.mean()),
                R_std=float(R.std(ddof=1)),
                flag_rate=float(np.mean(R > R_ref + k * sigma_flag)),
                mean_signal=float(ms_all[i].mean()),
                mean_signal_std=float(ms_all[i].std(ddof=1)),
                n_realizations=n_realizations,
            )
        )
    return points


def linear_fit(points: Sequence[SweepPoint]) -> tuple[float, float, float]:
    """Least-squares line ``R = intercept + slope * f``; returns ``(intercept, slope, r2)``."""
    f = np.array([p.fraction for p in points])
    R = np.array([p.R_mean for p in points])
    if f.size < 2 or np.ptp(f) == 0:
        raise ParameterError("need at least two distinct fractions to fit")
    slope, intercept = np.polyfit(f, R, 1)
    resid = R - (intercept + slope * f)
    ss_tot = np.sum((R - R.mean()) ** 2)
    r2 = 1 - np.sum(resid**2) / ss_tot if ss_tot > 0 else 1.0
    return float(intercept), float(slope), float(r2)


def crossing_fraction(points: Sequence[SweepPoint], level: float) -> float:
    """Intercepted fraction at which the fitted line reaches ``level``.

    May fall outside [0, 1] (or be infinite for a flat line); callers decide
    what an out-of-range crossing means.
    """
    intercept, slope, _ = linear_fit(points)
    if slope == 0:
        return math.inf
    return (level - intercept) / slope


def write_sweep_csv(points: Sequence[SweepPoint], path, comment: str | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        if comment:
            fh.write(comment + "\n")
        fh.write("fraction,R_mean,R_std,flag_rate\n")
        for p in points:
            fh.write(f"{p.fraction:.10g},{p.R_mean:.10g},{p.R_std:.10g},{p.flag_rate:.10g}\n")
    return path
