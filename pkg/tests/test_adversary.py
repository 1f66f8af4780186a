import math

import numpy as np
import pytest

from twinbeam.adversary import (
    AttackParams,
    attack_sweep,
    crossing_fraction,
    detect_attack,
    intercept_resend,
    linear_fit,
    write_sweep_csv,
)
from twinbeam.channel import fano_detected, generate_dataset
from twinbeam.errors import ParameterError
from twinbeam.estimators import batch_stats, r_standard_error

FRACTIONS = [i / 10 for i in range(11)]


@pytest.fixture(scope="module")
def bit_data(small_params):
    return {b: generate_dataset(small_params, b, 400_000, 555) for b in (0, 1)}


@pytest.fixture(scope="module")
def sweeps(bit_data):
    return {
        b: attack_sweep(bit_data[b], FRACTIONS, 40000, 400, 1000 + b, R_ref=batch_stats(bit_data[b]).R,
                        sigma_flag=0.002)
        for b in (0, 1)
    }


def test_n_intercepted_rounding():
    assert AttackParams(0.0).n_intercepted(40000) == 0
    assert AttackParams(0.09).n_intercepted(40000) == 3600
    assert AttackParams(0.5).n_intercepted(3) == 2
    with pytest.raises(ParameterError):
        AttackParams(1.5)
    with pytest.raises(ParameterError):
        AttackParams(0.5, "guess")


def test_zero_fraction_is_identity(bit_data, rng):
    ds = bit_data[0]
    out = intercept_resend(ds, AttackParams(0.0), rng)
    assert np.array_equal(out.m_signal, ds.m_signal) and np.array_equal(out.m_idler, ds.m_idler)
    shots = [(1, 2), (3, 4)]
    assert intercept_resend(shots, AttackParams(0.0), rng) == [(1, 2), (3, 4)]


def test_full_replacement_closed_form(bit_data, small_params, rng):
    ds = bit_data[0]
    out = intercept_resend(ds, AttackParams(1.0), rng)
    assert np.array_equal(out.m_idler, ds.m_idler)
    m = small_params.mean_idler
    lam = small_params.mean_signal(0)
    var_i = m * fano_detected(1 + small_params.twb.mean / small_params.twb.modes, small_params.eta)
    expected = (var_i + lam) / (m + lam)
    assert abs(batch_stats(out).R - expected) < 3 * r_standard_error(out)
    # with the measured idler Fano 1.012 and resend mean 3.44 + 0.176 this is about 1.008
    assert (7.37 * 1.012 + 3.616) / (7.37 + 3.616) == pytest.approx(1.008, abs=5e-4)


@pytest.mark.parametrize("f", [0.1, 0.5, 1.0])
def test_mean_preserved(bit_data, f):
    ds = bit_data[1]
    out = intercept_resend(ds, AttackParams(f), np.random.default_rng(int(f * 10)))
    se = ds.m_signal.std(ddof=1) / math.sqrt(len(ds))
    assert abs(out.m_signal.mean() - ds.m_signal.mean()) < 3 * se * math.sqrt(2)


def test_estimated_mode_uses_intercepted_mean(rng):
    shots = [(0, 5)] * 1000
    out = intercept_resend(shots, AttackParams(1.0, "estimated"), rng)
    assert abs(np.mean([s for _, s in out]) - 5) < 0.3
    with pytest.raises(ParameterError):
        intercept_resend(shots, AttackParams(1.0, "exact"), rng)


def test_detect_attack_examples():
    assert not detect_attack(0.962, 0.962, 0.002, 2)
    assert detect_attack(1.01, 0.962, 0.002, 2)
    with pytest.raises(ParameterError):
        detect_attack(1.0, 0.9, 0.0)


def test_attacked_bit0_at_fifth_is_detected(sweeps, bit_data):
    p = next(p for p in sweeps[0] if p.fraction == 0.2)
    assert detect_attack(p.R_mean, batch_stats(bit_data[0]).R, 0.002, 2)


def test_sweep_baseline_and_linearity(sweeps, bit_data):
    for b in (0, 1):
        pts = sweeps[b]
        base = pts[0]
        assert abs(base.R_mean - batch_stats(bit_data[b]).R) < base.R_std
        _, slope, r2 = linear_fit(pts)
        assert r2 > 0.99 and slope > 0
        se = [p.R_std / math.sqrt(p.n_realizations) for p in pts]
        assert all(q.R_mean >= p.R_mean - s for p, q, s in zip(pts, pts[1:], se))


def test_sweep_mean_preservation(sweeps, bit_data):
    for b in (0, 1):
        for p in sweeps[b]:
            # per-batch statistical error of Bob's mean
            assert abs(p.mean_signal - bit_data[b].m_signal.mean()) < 3 * p.mean_signal_std


def test_sweep_crossing_ordering(sweeps, bit_data):
    c2 = {b: crossing_fraction(sweeps[b], batch_stats(bit_data[b]).R + 2 * 0.002) for b in (0, 1)}
    c1 = {b: crossing_fraction(sweeps[b], 1.0) for b in (0, 1)}
    assert c2[0] < c2[1]
    assert c1[1] < c1[0]
    assert 0 < c2[0] < c1[0] < 1


def test_sweep_reproducible_across_threads(bit_data):
    a = attack_sweep(bit_data[0], [0, 0.3, 1], 2000, 40, 7, threads=1)
    b = attack_sweep(bit_data[0], [0, 0.3, 1], 2000, 40, 7, threads=3)
    assert a == b


def test_sweep_estimated_mode_runs(bit_data):
    pts = attack_sweep(bit_data[0], [0, 1], 2000, 20, 3, resend_mean_mode="estimated")
    assert pts[1].R_mean > pts[0].R_mean


def test_sweep_rejects_empty_grid(bit_data):
    with pytest.raises(ParameterError):
        attack_sweep(bit_data[0], [], 1000, 10, 0)


def test_sweep_matches_explicit_resend(bit_data):
    # the prefix/common-random-number shortcut must agree in distribution with
    # attacking fresh random subsets of fresh bootstrap batches one at a time
    ds = bit_data[0]
    g = np.random.default_rng(8)
    direct = []
    for _ in range(300):
        idx = g.integers(0, len(ds), 4000)
        batch = np.column_stack([ds.m_idler[idx], ds.m_signal[idx]])
        out = intercept_resend(batch, AttackParams(0.6), g, true_mean=ds.true_mean_signal)
        direct.append(batch_stats(out).R)
    [p] = attack_sweep(ds, [0.6], 4000, 300, 9)
    se = math.hypot(np.std(direct, ddof=1), p.R_std) / math.sqrt(300)
    assert abs(np.mean(direct) - p.R_mean) < 4 * se


def test_linear_fit_needs_two_fractions(sweeps):
    with pytest.raises(ParameterError):
        linear_fit(sweeps[0][:1])


def test_write_sweep_csv(tmp_path, sweeps):
    lines = write_sweep_csv(sweeps[0], tmp_path / "s.csv", comment="# c").read_text().splitlines()
    assert lines[:2] == ["# c", "fraction,R_mean,R_std,flag_rate"]
    assert len(lines) == 2 + len(FRACTIONS)
