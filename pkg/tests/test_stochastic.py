import math

import numpy as np
import pytest
from scipy import stats

from smpd.analytics import DarkCountBudget, EfficiencyBudget
from smpd.device import CycleTiming, derive_cycle, with_overrides
from smpd.stochastic import (
    ClickRecord,
    SimConfig,
    click_probability,
    click_record_bytes,
    dark_series,
    expected_rate,
    fit_rate_curve,
    measure_rate,
    rate_curve,
    read_click_record,
    reset_statistics,
    simulate_run,
    write_click_record,
)

SMPD1_OPERATING = EfficiencyBudget(eta_4wm=0.7998, eta_ro=0.73, eta_d=0.8403361344537815, eta_qubit=0.8762591472978818)


@pytest.fixture(scope="module")
def dev(smpd1):
    return smpd1.device, smpd1.timing


def test_operating_budget_constant_is_measured_efficiency():
    assert SMPD1_OPERATING.eta_total == pytest.approx(0.43, abs=1e-4)


class TestSimulateRun:
    def test_no_dark_no_input_gives_no_clicks(self, dev):
        d, t = dev
        d0 = with_overrides(d, p_eq=0.0, p_reset=0.0)
        rec = simulate_run(SimConfig(1_000_000, 1, SMPD1_OPERATING, dark=None), d0, t)
        assert rec.n_clicks == 0
        assert rec.rate == 0.0
        assert rec.stderr > 0

    def test_dark_rate_within_three_sigma(self, dev):
        d, t = dev
        rec = simulate_run(SimConfig(1_000_000, 2024, SMPD1_OPERATING, dark=85.0), d, t)
        assert abs(rec.rate - 85.0) <= 3 * rec.stderr
        assert rec.duration == pytest.approx(11.9, rel=1e-6)

    def test_layout_independence(self, dev):
        d, t = dev
        cfg = SimConfig(300_001, 99, SMPD1_OPERATING, dark=85.0, input_rate=5000.0, p_g1=0.05)
        ref = simulate_run(cfg, d, t)
        for chunk, workers in ((1000, 1), (4097, 4), (300_001, 2), (7, 3)):
            other = simulate_run(SimConfig(300_001, 99, SMPD1_OPERATING, dark=85.0, input_rate=5000.0, p_g1=0.05,
                                           chunk_size=chunk, workers=workers), d, t)
            assert other == ref
            assert click_record_bytes(other)[:8] == click_record_bytes(ref)[:8]

    def test_seed_changes_outcome(self, dev):
        d, t = dev
        a = simulate_run(SimConfig(100_000, 1, SMPD1_OPERATING, dark=85.0, input_rate=1e4), d, t)
        b = simulate_run(SimConfig(100_000, 2, SMPD1_OPERATING, dark=85.0, input_rate=1e4), d, t)
        assert not np.array_equal(a.packed, b.packed)

    def test_record_invariants(self, dev):
        d, t = dev
        rec = simulate_run(SimConfig(50_000, 3, SMPD1_OPERATING, dark=85.0, input_rate=2e4, p_g1=0.2), d, t)
        assert rec.reset_attempts.size == rec.n_clicks
        assert np.all(rec.reset_attempts >= 1)
        assert rec.reset_attempts.max() > 1
        assert np.all(np.diff(rec.cycle_ps) >= rec.t_cycle_ps)
        assert rec.clicks.size == rec.n_cycles
        with pytest.raises(ValueError):
            ClickRecord(rec.packed, rec.n_cycles, rec.cycle_ps, rec.end_ps, rec.reset_attempts[:-1], rec.seed,
                        rec.chunk_size, rec.t_cycle_ps, rec.extra_ps, rec.params_hash)

    def test_binary_round_trip(self, dev, tmp_path):
        d, t = dev
        rec = simulate_run(SimConfig(12_345, 5, SMPD1_OPERATING, dark=85.0, input_rate=3e4, p_g1=0.1), d, t)
        path = write_click_record(rec, tmp_path / "run.bin")
        assert read_click_record(path) == rec
        assert path.with_suffix(".txt").exists()
        assert len(path.read_bytes()) == 96 + (12_345 + 7) // 8 + 4 * rec.n_clicks

    def test_corrupt_binary_rejected(self, dev, tmp_path):
        d, t = dev
        rec = simulate_run(SimConfig(100, 5, SMPD1_OPERATING, dark=85.0), d, t)
        blob = click_record_bytes(rec)
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"X" + blob[1:])
        with pytest.raises(ValueError, match="magic"):
            read_click_record(bad)
        bad.write_bytes(blob[:-1])
        with pytest.raises(ValueError, match="size"):
            read_click_record(bad)

    def test_inconsistent_dark_model_rejected(self, dev):
        d, t = dev
        # 0.1 /s over 11.9 us is far below the 1e-5 reset residual
        with pytest.raises(ValueError, match="below the reset residual"):
            simulate_run(SimConfig(10, 0, SMPD1_OPERATING, dark=0.1), d, t)
        with pytest.raises(ValueError, match="outside \\[0, 1\\]"):
            simulate_run(SimConfig(10, 0, SMPD1_OPERATING, dark=1e6), d, t)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(0, 0, SMPD1_OPERATING)
        with pytest.raises(ValueError):
            SimConfig(10, -1, SMPD1_OPERATING)
        with pytest.raises(ValueError):
            SimConfig(10, 0, SMPD1_OPERATING, chunk_size=0)
        with pytest.raises(ValueError):
            SimConfig(10, 0, SMPD1_OPERATING, p_g1=1.0)
        with pytest.raises(ValueError):
            SimConfig(10, 0, SMPD1_OPERATING, readout="bayes")

    def test_budget_dark_model(self, dev):
        d, t = dev
        budget = DarkCountBudget(5.0, 0.0, 80.0)
        assert SimConfig(10, 0, SMPD1_OPERATING, dark=budget).dark_rate == 85.0


class TestRateCurve:
    def test_low_rate_slope_and_saturation(self, dev):
        d, t = dev
        cfg = SimConfig(1_000_000, 7, SMPD1_OPERATING, dark=85.0)
        pts = rate_curve(np.arange(0, 2001, 250), cfg, d, t)
        fit = fit_rate_curve(pts)
        assert fit.slope == pytest.approx(0.43, abs=0.02)
        assert fit.intercept == pytest.approx(85.0, abs=4 * math.sqrt(85 / 11.9))
        sat = measure_rate(cfg.with_rate(1e8), d, t)
        assert sat.detected_rate == pytest.approx(1 / derive_cycle(t).t_cycle, rel=0.01)
        assert sat.detected_rate <= 1 / derive_cycle(t).t_cycle * (1 + 1e-12)

    def test_sublinear_at_12000(self, dev):
        d, t = dev
        cfg = SimConfig(1_000_000, 8, SMPD1_OPERATING, dark=85.0, input_rate=12_000)
        got = measure_rate(cfg, d, t)
        linear = 0.43 * 12_000 + 85.0
        assert got.detected_rate < linear - 5 * got.stderr
        assert got.detected_rate == pytest.approx(expected_rate(cfg, d, t), abs=4 * got.stderr)

    def test_rejects_descending_rates(self, dev):
        d, t = dev
        with pytest.raises(ValueError):
            rate_curve([10.0, 5.0], SimConfig(10, 0, SMPD1_OPERATING), d, t)

    def test_closed_form_probability(self, dev):
        d, t = dev
        cfg = SimConfig(10, 0, SMPD1_OPERATING, dark=None, input_rate=1e4)
        eta_w = SMPD1_OPERATING.eta_4wm * SMPD1_OPERATING.eta_qubit * SMPD1_OPERATING.eta_ro
        assert click_probability(cfg, d, t) == pytest.approx(-math.expm1(-eta_w * 1e4 * t.t_d), rel=1e-14)
        # low-rate limit of the rate is eta_total * r
        low = SimConfig(10, 0, SMPD1_OPERATING, dark=None, input_rate=1e-3)
        assert expected_rate(low, d, t) / 1e-3 == pytest.approx(SMPD1_OPERATING.eta_total, rel=1e-6)


class TestDarkSeries:
    def test_poisson_bins(self, dev):
        d, t = dev
        t_cycle = derive_cycle(t).t_cycle
        bin_cycles = 1_000_000
        wall = 100 * bin_cycles * t_cycle * (1 + 1e-9)
        ser = dark_series(wall, bin_cycles, SimConfig(1, 11, SMPD1_OPERATING, dark=85.0, workers=4), d, t)
        assert ser.counts.size == 100
        assert ser.durations == pytest.approx(np.full(100, 11.9), rel=1e-9)
        lam = 85.0 * 11.9
        assert abs(ser.counts.mean() - lam) <= 3 * math.sqrt(lam / 100)
        # index of dispersion: (n-1) * var / mean is chi-square with n-1 dof under Poisson
        disp = ser.counts.var(ddof=1) / ser.counts.mean()
        lo, hi = stats.chi2.ppf([0.005, 0.995], 99) / 99
        assert lo <= disp <= hi

    def test_no_dark_all_zero(self, dev):
        d, t = dev
        ser = dark_series(1.0, 10_000, SimConfig(1, 11, SMPD1_OPERATING, dark=None), d, t)
        assert ser.counts.size == 8
        assert np.all(ser.counts == 0)

    def test_bins_of_1e5_and_partial_bin_dropped(self, dev):
        d, t = dev
        ser = dark_series(3.0, 100_000, SimConfig(1, 12, SMPD1_OPERATING, dark=85.0), d, t)
        assert ser.counts.size == 2
        assert np.all(ser.start_times[1:] == ser.start_times[:-1] + ser.durations[:-1])

    def test_bad_bin(self, dev):
        d, t = dev
        with pytest.raises(ValueError):
            dark_series(1.0, 0, SimConfig(1, 0, SMPD1_OPERATING), d, t)
        with pytest.raises(ValueError, match="shorter than one bin"):
            dark_series(1e-3, 10_000, SimConfig(1, 0, SMPD1_OPERATING), d, t)


class TestResetStatistics:
    def test_perfect_ground_readout_single_attempt(self, dev):
        d, t = dev
        cfg = SimConfig(200_000, 4, SMPD1_OPERATING, dark=85.0, input_rate=2e4, p_g1=0.0)
        st = reset_statistics(cfg, d, t)
        assert st.mean_attempts == 1.0
        assert st.mean_t_r == t.t_r_avg
        rec = simulate_run(cfg, d, t)
        assert np.all(rec.reset_attempts == 1)

    def test_realistic_reset_time(self, dev):
        d, t = dev
        cfg = SimConfig(1_000_000, 4, SMPD1_OPERATING, dark=85.0, input_rate=1e4, p_g1=0.02)
        st = reset_statistics(cfg, d, t)
        assert st.mean_attempts == pytest.approx(1 / (1 - 0.02), rel=0.02)
        assert 0.4e-6 <= st.mean_t_r <= 0.5e-6

    def test_residual_excitation_over_1e8_cycles(self, dev):
        d, t = dev
        cfg = SimConfig(100_000_000, 5, SMPD1_OPERATING, dark=85.0, chunk_size=1 << 20, workers=4)
        st = reset_statistics(cfg, d, t)
        assert 1e-5 / 3 <= st.residual_probability <= 3e-5

    def test_geometric_attempts(self, dev):
        d, t = dev
        cfg = SimConfig(200_000, 6, SMPD1_OPERATING, dark=85.0, input_rate=5e4, p_g1=0.3)
        rec = simulate_run(cfg, d, t)
        a = rec.reset_attempts.astype(float)
        assert a.mean() == pytest.approx(1 / 0.7, abs=4 * a.std() / math.sqrt(a.size))
        extra_ps = round((t.t_m + 50e-9) / 1e-12)
        assert rec.end_ps == rec.n_cycles * rec.t_cycle_ps + int((rec.reset_attempts - 1).sum()) * extra_ps


class TestCycleReadoutMode:
    def test_saturation_scaled_by_readout(self, dev):
        d, t = dev
        cfg = SimConfig(200_000, 9, SMPD1_OPERATING, dark=85.0, input_rate=1e8, readout="cycle")
        got = measure_rate(cfg, d, t)
        assert got.detected_rate == pytest.approx(0.73 / derive_cycle(t).t_cycle, abs=4 * got.stderr)

    def test_dark_rate_preserved(self, dev):
        d, t = dev
        cfg = SimConfig(1_000_000, 10, SMPD1_OPERATING, dark=85.0, readout="cycle")
        assert expected_rate(cfg, d, t) == pytest.approx(85.0, rel=1e-12)
        got = measure_rate(cfg, d, t)
        assert abs(got.detected_rate - 85.0) <= 3 * got.stderr


def test_dark_cycle_bookkeeping_uses_fixture_timing(dev):
    d, t = dev
    assert derive_cycle(CycleTiming(10e-6, 0.5e-6, 0.4e-6, 1e-6)).t_cycle == pytest.approx(derive_cycle(t).t_cycle)
