"""Pulse-height calibration of a photon-number-resolving detector.

A detector reports one analog amplitude per shot, proportional to the number
of detected photons plus electronic noise.  The pulse-height spectrum then
shows one peak per photon number; the gain (volts per photon) is the mean
spacing between adjacent peaks, and counts are recovered by dividing by the
gain and rounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import find_peaks

from .errors import CalibrationError, ParameterError

__all__ = [
    "PulseTrace",
    "CalibrationResult",
    "synth_pulse_heights",
    "pulse_height_histogram",
    "autocorrelation_gain",
    "estimate_gain",
    "volts_to_photons",
    "read_trace_csv",
    "write_trace_csv",
    "write_histogram_csv",
]

# adjacent-spacing scatter above this is not a photon-number comb
MAX_SPACING_SCATTER = 0.25
EM_BINS_PER_PEAK = 200


@dataclass
class PulseTrace:
    amplitudes: np.ndarray
    true_gain: float | None = None

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).ravel()
        if self.amplitudes.size == 0:
            raise ParameterError("pulse trace is empty")

    def __len__(self) -> int:
        return self.amplitudes.size


@dataclass(frozen=True)
class CalibrationResult:
    gain: float
    peak_positions: tuple[float, ...]
    n_peaks: int
    bin_width: float


def synth_pulse_heights(counts, gain: float, noise_sigma: float, rng: np.random.Generator) -> PulseTrace:
    """Amplitudes ``gain * m + N(0, noise_sigma)``, one per shot."""
    if gain <= 0:
        raise ParameterError("gain must be > 0")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    m = np.asarray(counts, dtype=float)
    amp = gain * m
    if noise_sigma > 0:
        amp = amp + rng.normal(0.0, noise_sigma, m.shape)
    return PulseTrace(amp, true_gain=gain)


def pulse_height_histogram(trace: PulseTrace, bin_width: float):
    """Fixed-width histogram; returns ``(bin_centers, counts)``."""
    if bin_width <= 0:
        raise ParameterError("bin_width must be > 0")
    x = trace.amplitudes
    # bins centered on integer multiples of bin_width
    lo = np.floor(x.min() / bin_width - 0.5) - 1
    hi = np.ceil(x.max() / bin_width + 0.5) + 1
    edges = (np.arange(lo, hi + 1) + 0.5) * bin_width
    counts, edges = np.histogram(x, bins=edges)
    return (edges[:-1] + edges[1:]) / 2, counts


def autocorrelation_gain(trace: PulseTrace, n_bins: int = 4000) -> float:
    """Rough gain from the first non-zero-lag maximum of the spectrum's autocorrelation."""
    x = trace.amplitudes
    span = np.ptp(x)
    if span == 0:
        raise CalibrationError("trace has a single amplitude value; no peak spacing")
    counts, edges = np.histogram(x, bins=n_bins)
    c = counts - counts.mean()
    ac = np.fft.irfft(np.abs(np.fft.rfft(c, 2 * n_bins)) ** 2)[:n_bins]
    # first dip, then the highest point after it within the next dip-to-dip span
    dips = np.nonzero((ac[1:-1] < ac[:-2]) & (ac[1:-1] <= ac[2:]))[0] + 1
    if dips.size == 0:
        raise CalibrationError("spectrum autocorrelation shows no periodicity")
    start = dips[0]
    peak_lags, _ = find_peaks(ac[start:], prominence=0.05 * ac[0])
    if peak_lags.size == 0:
        raise CalibrationError("spectrum autocorrelation shows no periodicity")
    return float((peak_lags[0] + start) * (edges[1] - edges[0]))


def _comb_em(x, w, means, tol, max_iter=1000):
    """Weighted Gaussian-mixture EM with free means and weights and one shared width.

    ``x`` are sample locations (histogram bin centers) with weights ``w``.
    """
    means = np.asarray(means, dtype=float).copy()
    weights = np.full(means.size, 1.0 / means.size)
    spacing = float(np.median(np.diff(means))) if means.size > 1 else 1.0
    var = (spacing / 4) ** 2
    var_floor = (1e-6 * spacing) ** 2
    total = w.sum()
    for _ in range(max_iter):
        logp = -0.5 * (x[:, None] - means[None, :]) ** 2 / var + np.log(weights + 1e-300)[None, :]
        logp -= logp.max(axis=1, keepdims=True)
        resp = np.exp(logp)
        resp *= (w / resp.sum(axis=1))[:, None]
        nk = resp.sum(axis=0)
        live = nk > 0
        new = means.copy()
        new[live] = (resp[:, live] * x[:, None]).sum(axis=0) / nk[live]
        weights = nk / total
        var = max(float((resp * (x[:, None] - new[None, :]) ** 2).sum() / total), var_floor)
        done = np.max(np.abs(new - means)) < tol
        means = new
        if done:
            break
    return means


def estimate_gain(trace: PulseTrace, bin_width: float | None = None, min_prominence: float = 0.05) -> CalibrationResult:
    """Gain from the mean distance between adjacent pulse-height peaks.

    Peaks are histogram local maxima at least half a rough gain apart whose
    prominence exceeds ``min_prominence`` times the tallest bin and three
    Poisson standard deviations of their own height.  The rough gain comes
    from the spectrum autocorrelation, which also sets the default bin width
    (1/20 of it).  Peak positions are then refined by a Gaussian-mixture fit
    on a comb that extends over the whole amplitude range, so overlap with
    neighbouring and undetected tail peaks does not bias them.
    """
    rough_gain = autocorrelation_gain(trace)
    if bin_width is None:
        bin_width = rough_gain / 20
    centers, counts = pulse_height_histogram(trace, bin_width)
    distance = max(1, int(0.5 * rough_gain / bin_width))
    peaks, props = find_peaks(counts, prominence=min_prominence * counts.max(), distance=distance)
    peaks = peaks[props["prominences"] > 3 * np.sqrt(counts[peaks])]
    if peaks.size < 2:
        raise CalibrationError(f"found {peaks.size} resolved peak(s); need at least 2")
    rough = centers[peaks]
    spacings = np.diff(rough)
    if spacings.std() > MAX_SPACING_SCATTER * spacings.mean():
        raise CalibrationError("peak spacings are irregular; spectrum is not photon-number resolved")

    g = float(spacings.mean())
    x = trace.amplitudes
    below = int(np.floor((x.min() - rough[0]) / g + 0.5))
    above = int(np.ceil((x.max() - rough[-1]) / g - 0.5))
    comb = np.concatenate([
        rough[0] + g * np.arange(min(below, 0), 0),
        rough,
        rough[-1] + g * np.arange(1, max(above, 0) + 1),
    ])
    first = -min(below, 0)
    fine_centers, fine_counts = pulse_height_histogram(trace, g / EM_BINS_PER_PEAK)
    nz = fine_counts > 0
    fitted = _comb_em(fine_centers[nz], fine_counts[nz].astype(float), comb, tol=1e-6 * g)
    positions = fitted[first:first + rough.size]
    gain = float(np.mean(np.diff(positions)))
    if gain <= 0:
        raise CalibrationError("non-positive gain estimate")
    return CalibrationResult(gain, tuple(positions.tolist()), int(positions.size), float(bin_width))


def volts_to_photons(trace: PulseTrace, gain: float) -> np.ndarray:
    """Round ``amplitude / gain`` to the nearest integer, clamped at zero."""
    if gain <= 0:
        raise ParameterError("gain must be > 0")
    m = np.floor(trace.amplitudes / gain + 0.5).astype(np.int64)
    return np.maximum(m, 0)


def read_trace_csv(path) -> PulseTrace:
    values = np.loadtxt(path, comments="#", ndmin=1)
    return PulseTrace(values)


def write_trace_csv(trace: PulseTrace, path, comment: str | None = None) -> Path:
    path = Path(path)
    np.savetxt(path, trace.amplitudes, fmt="%.9g", header=comment or "", comments="")
    return path


def write_histogram_csv(centers, counts, path, comment: str | None = None) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        if comment:
            fh.write(comment + "\n")
        fh.write("bin_center,count\n")
        for c, n in zip(np.asarray(centers).tolist(), np.asarray(counts).tolist()):
            fh.write(f"{c:.9g},{n}\n")
    return path
