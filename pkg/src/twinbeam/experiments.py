"""Seeded end-to-end runs behind the command-line subcommands.

Each ``run_*`` function writes CSV/JSON artifacts into ``out_dir`` and returns
the summary it wrote as a dict.  Every file starts with (CSV) or contains
(JSON) the config hash and seed.  Results depend only on the config and seed.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .adversary import attack_sweep, crossing_fraction, linear_fit, write_sweep_csv
from .calibration import (
    estimate_gain,
    pulse_height_histogram,
    read_trace_csv,
    synth_pulse_heights,
    volts_to_photons,
    write_histogram_csv,
    write_trace_csv,
)
from .channel import (
    ChannelParams,
    calibrate_modes,
    estimate_transmission,
    fit_efficiency,
    generate_dataset,
    max_noise_for_nonclassicality,
    predict_R,
)
from .config import ExperimentConfig
from .discrimination import (
    auc,
    confusion_counts,
    decode_key,
    decode_key_from_rates,
    error_probability,
    hybrid_decode_key,
    key_report,
    midpoint_threshold,
    roc_curve,
    write_key,
    write_roc_csv,
)
from .errors import ConfigError, ParameterError
from .estimators import (
    batch_stats,
    bootstrap_table,
    disjoint_batches,
    r_standard_error,
    summarize,
    write_batch_csv,
)
from .sources import SourceParams, fit_modes_by_moments, pmf_multimode_thermal, sample_multimode_thermal

log = logging.getLogger(__name__)

STRATEGY_COLUMN = {"mean": "mean_signal", "R": "R"}


def _out(out_dir) -> Path:
    p = Path(out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_json(path: Path, cfg: ExperimentConfig, payload: dict) -> None:
    doc = {"config_sha256": cfg.config_hash, "seed": cfg.seed, **payload}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x).__name__)


def _write_rows(path: Path, cfg: ExperimentConfig, header: list[str], rows) -> None:
    with path.open("w") as fh:
        fh.write(cfg.provenance() + "\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)


def _bit_datasets(cfg: ExperimentConfig, params: ChannelParams):
    # same seed for both bits: they share the twin-beam shots, only the noise differs
    return {
        bit: generate_dataset(params, bit, cfg.n_shots, cfg.seed, threads=cfg.threads)
        for bit in (0, 1)
    }


def _pmf_rows(counts):
    counts = np.asarray(counts)
    top = int(counts.max())
    empirical = np.bincount(counts, minlength=top + 1) / counts.size
    try:
        fit = fit_modes_by_moments(counts)
        fitted = pmf_multimode_thermal(np.arange(top + 1), fit)
        fit_d = {"mean": fit.mean, "modes": fit.modes}
    except ValueError:
        fitted = np.full(top + 1, math.nan)
        fit_d = None
    return [(m, float(empirical[m]), float(fitted[m])) for m in range(top + 1)], fit_d


def run_characterize(cfg: ExperimentConfig, out_dir) -> dict:
    """Photon statistics, Fano factors, R, and fitted t / eta / mu of the channel."""
    out = _out(out_dir)
    params = cfg.channel.params()
    nb = cfg.characterize.n_disjoint_batches
    datasets = {"noiseless": generate_dataset(params, None, cfg.n_shots, cfg.seed, cfg.threads)}
    datasets.update({f"bit{b}": d for b, d in _bit_datasets(cfg, params).items()})

    rows, report = [], {}
    for name, ds in datasets.items():
        whole = batch_stats(ds)
        parts = summarize(disjoint_batches(ds, nb), "R")
        pred = predict_R(params.mean_idler, params, ds.bit)
        report[name] = {
            "mean_idler": whole.mean_idler,
            "mean_signal": whole.mean_signal,
            "fano_idler": whole.fano_idler,
            "fano_signal": whole.fano_signal,
            "R": whole.R,
            "R_std_error": r_standard_error(ds),
            "R_disjoint_mean": parts.mean,
            "R_disjoint_std_error": parts.std_error / math.sqrt(nb),
            "R_predicted": pred,
        }
        rows.append((name, whole.mean_idler, whole.mean_signal, whole.fano_idler,
                     whole.fano_signal, whole.R, report[name]["R_std_error"], pred))
        if cfg.save_datasets:
            ds.to_csv(out / f"dataset_{name}.csv", comment=cfg.provenance())
    _write_rows(out / "characterization.csv", cfg,
                ["dataset", "mean_i", "mean_s", "fano_i", "fano_s", "R", "R_se", "R_predicted"], rows)

    # per-arm distributions with multi-mode thermal fits
    noiseless = datasets["noiseless"]
    fits = {}
    noise_draws = {
        b: sample_multimode_thermal(params.noise(b), rngmod.substream(cfg.seed, rngmod.NOISE, 10**6, b), cfg.n_shots)
        for b in (0, 1)
    }
    for arm, counts in (("idler", noiseless.m_idler), ("signal", noiseless.m_signal),
                        ("noise0", noise_draws[0]), ("noise1", noise_draws[1])):
        pmf_rows, fits[arm] = _pmf_rows(counts)
        _write_rows(out / f"pmf_{arm}.csv", cfg, ["m", "empirical", "fitted"], pmf_rows)

    base = report["noiseless"]
    t_hat = estimate_transmission(base["mean_signal"], base["mean_idler"])
    mu_hat = fits["idler"]["modes"] if fits["idler"] else math.inf
    eta_hat, eta_err = fit_efficiency(
        [base["mean_idler"]], [base["R"]], t=t_hat, modes=mu_hat, R_errors=[base["R_std_error"]]
    )

    # symmetric lossless series at several intensities -> eta from R = 1 - eta
    sym_rows, sym_R, sym_err, sym_m = [], [], [], []
    ceta = cfg.characterize.symmetric_eta
    for i, m in enumerate(cfg.characterize.symmetric_mean_idlers):
        p = ChannelParams(ceta, 1.0, SourceParams(m / ceta, cfg.channel.modes))
        ds = generate_dataset(p, None, cfg.n_shots, rngmod.derive_seed(cfg.seed, rngmod.PARAMS, i), cfg.threads)
        s = batch_stats(ds)
        parts = summarize(disjoint_batches(ds, nb), "R")
        se = r_standard_error(ds)
        sym_rows.append((m, s.mean_idler, s.mean_signal, s.fano_idler, s.fano_signal, s.R, se,
                         parts.std_error / math.sqrt(nb)))
        sym_R.append(s.R)
        sym_err.append(se)
        sym_m.append(s.mean_idler)
    _write_rows(out / "symmetric.csv", cfg,
                ["target_mean", "mean_i", "mean_s", "fano_i", "fano_s", "R", "R_se", "R_disjoint_se"], sym_rows)
    sym_eta, sym_eta_err = fit_efficiency(sym_m, sym_R, t=1.0, R_errors=sym_err)

    summary = {
        "datasets": report,
        "transmission_fit": t_hat,
        "modes_fit_idler": mu_hat,
        "eta_from_R": {"eta": eta_hat, "std_error": eta_err},
        "symmetric": {"eta_true": ceta, "eta_fit": sym_eta, "std_error": sym_eta_err},
        "noise_fits": {"noise0": fits["noise0"], "noise1": fits["noise1"]},
        "noise_bound": max_noise_for_nonclassicality(params.mean_idler, params),
        "modes_configured": cfg.channel.modes,
    }
    if len(cfg.measured_R) == 3:
        c = cfg.channel
        try:
            summary["modes_calibration"] = calibrate_modes(
                c.mean_idler, c.eta, c.t, (0.0, c.noise_mean_0, c.noise_mean_1), cfg.measured_R, c.noise_modes
            )
        except ParameterError as exc:
            log.warning("mode calibration skipped: %s", exc)
            summary["modes_calibration"] = None
    _write_json(out / "characterize.json", cfg, summary)
    return summary


def _references(datasets):
    return {
        "R": {b: batch_stats(d).R for b, d in datasets.items()},
        "mean": {b: batch_stats(d).mean_signal for b, d in datasets.items()},
    }


def _thresholds(cfg: ExperimentConfig, refs) -> dict:
    d = cfg.discriminate
    return {
        "mean": d.threshold_mean if d.threshold_mean is not None else midpoint_threshold(refs["mean"][0], refs["mean"][1]),
        "R": d.threshold_R if d.threshold_R is not None else midpoint_threshold(refs["R"][0], refs["R"][1]),
    }


def _boot(cfg, datasets, bit, batch_size, n_batches, *key):
    seed = rngmod.derive_seed(cfg.seed, rngmod.BOOTSTRAP, bit, batch_size, *key)
    return bootstrap_table(datasets[bit], batch_size, n_batches, seed, threads=cfg.threads)


def run_discriminate(cfg: ExperimentConfig, out_dir) -> dict:
    """Bootstrap histograms, error probability vs batch size, ROC and AUC per strategy."""
    out = _out(out_dir)
    params = cfg.channel.params()
    datasets = _bit_datasets(cfg, params)
    refs = _references(datasets)
    th = _thresholds(cfg, refs)
    d = cfg.discriminate
    sizes = sorted(set(d.batch_sizes) | set(d.perr_batch_sizes))
    rows, results = [], []
    for db in sizes:
        tables = {b: _boot(cfg, datasets, b, db, d.n_batches) for b in (0, 1)}
        for strategy, col in STRATEGY_COLUMN.items():
            s0, s1 = tables[0].column(col), tables[1].column(col)
            cc = confusion_counts(s0, s1, th[strategy])
            roc = roc_curve(s0, s1)
            res = {
                "batch_size": db, "strategy": strategy, "threshold": th[strategy],
                "tp": cc.tp, "fp": cc.fp, "tn": cc.tn, "fn": cc.fn,
                "fpr": cc.fpr, "fnr": cc.fnr, "p_err": error_probability(cc), "auc": auc(roc),
                "mean0": float(s0.mean()), "std0": float(s0.std(ddof=1)),
                "mean1": float(s1.mean()), "std1": float(s1.std(ddof=1)),
            }
            results.append(res)
            rows.append(tuple(res[k] for k in ("batch_size", "strategy", "threshold", "fpr", "fnr",
                                                "p_err", "auc", "mean0", "std0", "mean1", "std1")))
            if db in d.batch_sizes:
                write_roc_csv(roc, out / f"roc_{strategy}_db{db}.csv", comment=cfg.provenance())
        if db in d.batch_sizes:
            for b in (0, 1):
                write_batch_csv(tables[b], out / f"batches_bit{b}_db{db}.csv", comment=cfg.provenance())
        log.info("discriminate d_b=%d done", db)
    _write_rows(out / "discrimination.csv", cfg,
                ["batch_size", "strategy", "threshold", "fpr", "fnr", "p_err", "auc",
                 "mean_bit0", "std_bit0", "mean_bit1", "std_bit1"], rows)
    summary = {"references": refs, "thresholds": th, "results": results}
    _write_json(out / "discriminate.json", cfg, summary)
    if cfg.gnuplot:
        _write_gnuplot_roc(out, d.batch_sizes)
    return summary


def run_keysim(cfg: ExperimentConfig, out_dir, key_length: int | None = None) -> dict:
    """Decode random keys bit by bit with the mean, R and hybrid strategies."""
    if key_length is not None:
        if key_length < 1:
            raise ConfigError(f"key length must be >= 1, got {key_length}")
        # fold the override into the config so the provenance hash records it
        cfg = cfg.with_overrides(keysim=replace(cfg.keysim, key_length=key_length))
    ks = cfg.keysim
    n_bits = ks.key_length
    out = _out(out_dir)
    params = cfg.channel.params()
    datasets = _bit_datasets(cfg, params)
    refs = _references(datasets)
    th = _thresholds(cfg, refs)
    rows, runs = [], []
    for db in ks.batch_sizes:
        # calibration phase: spread of R for unattacked batches at this batch size
        sigma_R = float(np.mean([
            summarize(_boot(cfg, datasets, b, db, ks.n_sigma_batches, 1), "R").std_error for b in (0, 1)
        ]))
        rates = None
        if ks.mode == "rates":
            tables = {b: _boot(cfg, datasets, b, db, cfg.discriminate.n_batches) for b in (0, 1)}
            rates = {
                s: confusion_counts(tables[0].column(c), tables[1].column(c), th[s])
                for s, c in STRATEGY_COLUMN.items()
            }
        for r in range(ks.n_keys):
            truth = rngmod.substream(cfg.seed, rngmod.KEY, db, r).integers(0, 2, n_bits)
            keys = {}
            if ks.mode == "simulation":
                per_bit = {b: _boot(cfg, datasets, b, db, max(int(np.sum(truth == b)), 1), 2, r) for b in (0, 1)}
                order = {0: 0, 1: 0}
                stats = []
                for b in truth.tolist():
                    stats.append(per_bit[b][order[b]])
                    order[b] += 1
                keys["mean"] = decode_key(truth, stats, "mean", th)
                keys["R"] = decode_key(truth, stats, "R", th)
                keys["hybrid"] = hybrid_decode_key(
                    truth, stats, th["mean"], refs["R"][0], refs["R"][1], sigma_R, ks.k
                )
            else:
                for s, cc in rates.items():
                    g = rngmod.substream(cfg.seed, rngmod.KEY, db, r, 1 + list(rates).index(s))
                    keys[s] = decode_key_from_rates(truth, cc.fpr, cc.fnr, g)
            for strategy, bits in keys.items():
                rep = key_report(bits)
                runs.append({"batch_size": db, "realization": r, "strategy": strategy, "sigma_R": sigma_R,
                             **{k: rep[k] for k in ("n_errors", "error_rate", "fpr", "fnr")},
                             "n_flagged": len(rep["flagged_positions"])})
                rows.append((db, strategy, r, rep["n_errors"], rep["error_rate"], rep["fpr"], rep["fnr"],
                             len(rep["flagged_positions"])))
                if r == 0:
                    write_key(bits, out / f"key_{strategy}_db{db}",
                              extra={"config_sha256": cfg.config_hash, "seed": cfg.seed, "batch_size": db})
    _write_rows(out / "keysim.csv", cfg,
                ["batch_size", "strategy", "realization", "n_errors", "error_rate", "fpr", "fnr", "n_flagged"], rows)
    summary = {"key_length": n_bits, "mode": ks.mode, "thresholds": th, "references": refs, "runs": runs}
    _write_json(out / "keysim.json", cfg, summary)
    return summary


def run_attack(cfg: ExperimentConfig, out_dir) -> dict:
    """Intercept-resend sweep per bit with 2-sigma and R = 1 crossings."""
    a = cfg.attack
    if not a.fractions:
        raise ConfigError("[attack] fraction grid is empty")
    out = _out(out_dir)
    params = cfg.channel.params()
    datasets = _bit_datasets(cfg, params)
    summary = {"bits": {}}
    for bit, ds in datasets.items():
        R_ref = batch_stats(ds).R
        seed = rngmod.derive_seed(cfg.seed, rngmod.ATTACK, bit)
        points = attack_sweep(ds, a.fractions, a.batch_size, a.n_realizations, seed,
                              resend_mean_mode=a.resend_mean, R_ref=R_ref, k=a.k, threads=cfg.threads)
        sigma_boot = next((p.R_std for p in points if p.fraction == 0.0), None)
        if a.sigma == "reference":
            sigma = cfg.sigma_ref
        elif a.sigma == "bootstrap":
            if sigma_boot is None:
                raise ConfigError("[attack] sigma = bootstrap needs 0 in the fraction grid")
            sigma = sigma_boot
        else:
            sigma = float(a.sigma)
        intercept, slope, r2 = linear_fit(points)
        summary["bits"][str(bit)] = {
            "R_ref": R_ref,
            "sigma": sigma,
            "sigma_bootstrap": sigma_boot,
            "intercept": intercept,
            "slope": slope,
            "r_squared": r2,
            "crossing_k_sigma": crossing_fraction(points, R_ref + a.k * sigma),
            "crossing_unity": crossing_fraction(points, 1.0),
            "true_mean_signal": ds.true_mean_signal,
            "points": [p.__dict__ for p in points],
        }
        write_sweep_csv(points, out / f"sweep_bit{bit}.csv", comment=cfg.provenance())
    _write_json(out / "attack.json", cfg, summary)
    if cfg.gnuplot:
        _write_gnuplot_sweep(out)
    return summary


def run_calibrate(cfg: ExperimentConfig, out_dir, trace_path=None) -> dict:
    """Gain calibration on a synthetic (or supplied) pulse-height trace."""
    out = _out(out_dir)
    c = cfg.calibrate
    truth = None
    if trace_path is None:
        g = rngmod.substream(cfg.seed, rngmod.TRACE)
        truth = sample_multimode_thermal(SourceParams(c.mean, c.modes), g, c.n_shots)
        trace = synth_pulse_heights(truth, c.gain, c.noise_sigma * c.gain, g)
        write_trace_csv(trace, out / "trace.csv", comment=cfg.provenance())
    else:
        trace = read_trace_csv(trace_path)
    res = estimate_gain(trace, c.bin_width, c.min_prominence)
    centers, counts = pulse_height_histogram(trace, res.bin_width)
    write_histogram_csv(centers, counts, out / "pulse_height_histogram.csv", comment=cfg.provenance())
    m = volts_to_photons(trace, res.gain)
    summary = {
        "gain": res.gain,
        "n_peaks": res.n_peaks,
        "peak_positions": list(res.peak_positions),
        "bin_width": res.bin_width,
        "mean_photons": float(m.mean()),
        "fano_photons": float(m.var(ddof=1) / m.mean()) if m.mean() > 0 else math.nan,
    }
    if truth is not None:
        summary.update({
            "true_gain": c.gain,
            "gain_relative_error": res.gain / c.gain - 1,
            "misassigned_fraction": float(np.mean(m != truth)),
            "true_mean": float(truth.mean()),
            "true_fano": float(truth.var(ddof=1) / truth.mean()),
        })
    _write_json(out / "calibrate.json", cfg, summary)
    return summary


def _write_gnuplot_roc(out: Path, sizes) -> None:
    lines = ["set datafile separator ','", "set key autotitle columnhead",
             "set xlabel 'FPR'", "set ylabel 'TPR'", "set size square",
             "plot x with lines dt 3 lc 'grey' notitle, \\"]
    files = [f"roc_{s}_db{db}.csv" for db in sizes for s in STRATEGY_COLUMN]
    lines += [f"  '{f}' skip 1 using 2:3 with steps title '{f[:-4]}'" + (", \\" if i < len(files) - 1 else "")
              for i, f in enumerate(files)]
    (out / "roc.gp").write_text("\n".join(lines) + "\n")


def _write_gnuplot_sweep(out: Path) -> None:
    (out / "sweep.gp").write_text(
        "set datafile separator ','\n"
        "set xlabel 'intercepted fraction'\nset ylabel 'R'\n"
        "plot 'sweep_bit0.csv' skip 2 using 1:2:3 with yerrorbars title 'bit 0', \\\n"
        "     'sweep_bit1.csv' skip 2 using 1:2:3 with yerrorbars title 'bit 1', 1 dt 2 notitle\n"
    )
