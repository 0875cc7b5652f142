import math

import numpy as np
import pytest

from smpd.analytics import (
    DarkCountBudget,
    EfficiencyBudget,
    alpha_qubit,
    alpha_thermal,
    cooperativity,
    dark_budget,
    detector_bandwidth,
    efficiency_budget,
    equivalent_temperature,
    external_cooperativity,
    nep,
    operating_budget,
    optimal_lossy_cooperativity,
    qubit_efficiency,
    sensitivity,
    sensitivity_report,
    snr,
    thermal_occupancy,
    transfer_efficiency,
    transfer_efficiency_lossy,
    transmission,
)
from smpd.constants import HBAR, K_B, TWO_PI
from smpd.device import Environment, PumpConfig, derive_cycle, with_overrides

MHZ = TWO_PI * 1e6
W_B = TWO_PI * 6.979e9


def _half_max_width(x, y):
    """Brute-force FWHM: linear interpolation at the two half-max crossings."""
    half = y.max() / 2
    above = np.nonzero(y >= half)[0]
    i, j = above[0], above[-1]
    left = np.interp(half, [y[i - 1], y[i]], [x[i - 1], x[i]])
    right = np.interp(half, [y[j + 1], y[j]], [x[j + 1], x[j]])
    return right - left


class TestCooperativity:
    def test_geometric_mean_match_is_unit(self, smpd1):
        d = smpd1.device
        xi = math.sqrt(d.kappa_b * d.kappa_w) / (2 * math.sqrt(d.chi_b * d.chi_w))
        assert cooperativity(PumpConfig(xi), d) == pytest.approx(1.0, rel=1e-14)

    def test_zero_pump(self, smpd1):
        assert cooperativity(PumpConfig(0.0), smpd1.device) == 0.0

    def test_smpd1_xi_squared(self, smpd1):
        # quoted linewidths 0.2 and 1.8 MHz give unit cooperativity at xi^2 = 9.2e-4
        d = with_overrides(smpd1.device, kappa_w_ext=1.8 * MHZ, kappa_w_int=0.0)
        assert cooperativity(PumpConfig(math.sqrt(9.2e-4)), d) == pytest.approx(1.0, abs=1e-3)

    def test_external_cooperativity_uses_external_buffer_rate(self, smpd1):
        d = smpd1.device
        p = smpd1.pump
        assert external_cooperativity(p, d) == pytest.approx(cooperativity(p, d) * d.kappa_b / d.kappa_b_ext, rel=1e-14)


class TestTransferEfficiency:
    def test_examples(self):
        assert transfer_efficiency(1.0) == 1.0
        assert transfer_efficiency(0.0) == 0.0
        assert transfer_efficiency(3.0) == pytest.approx(0.75, abs=1e-15)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            transfer_efficiency(-0.1)

    def test_lossy_optimum_is_086(self):
        r = 0.028 / 0.172
        assert transfer_efficiency_lossy(1 + r, 0.028, 0.172) == pytest.approx(0.86, abs=5e-4)

    def test_lossless_limit(self):
        c = np.linspace(0, 10, 101)
        np.testing.assert_allclose(transfer_efficiency_lossy(c, 0.0, 1.0), transfer_efficiency(c), rtol=0, atol=1e-15)

    def test_argmax_brute_force(self):
        c = np.arange(0, 10 + 5e-5, 1e-4)
        r = 0.028 / 0.172
        best = c[np.argmax(transfer_efficiency_lossy(c, 0.028, 0.172))]
        assert abs(best - (1 + r)) <= 1e-4
        assert optimal_lossy_cooperativity(0.028, 0.172) == pytest.approx(1 + r, rel=1e-15)

    def test_lossy_zero_ext_rejected(self):
        with pytest.raises(ValueError):
            transfer_efficiency_lossy(1.0, 0.1, 0.0)


class TestBandwidth:
    def test_smpd1(self):
        assert detector_bandwidth(0.2 * MHZ, 1.8 * MHZ) / MHZ == pytest.approx(0.434, abs=0.005)

    def test_symmetric_case(self):
        assert detector_bandwidth(MHZ, MHZ) == pytest.approx(math.sqrt(2) * MHZ, rel=1e-15)

    def test_strongly_overcoupled_waste(self):
        assert detector_bandwidth(MHZ, 1000 * MHZ) == pytest.approx(2 * MHZ, rel=1e-3)

    def test_nonpositive_rejected(self):
        with pytest.raises(ValueError):
            detector_bandwidth(0.0, MHZ)

    def test_numeric_fwhm_of_transmission(self):
        kb, kw = 0.2 * MHZ, 1.8 * MHZ
        delta = np.linspace(-2 * MHZ, 2 * MHZ, 400_001)
        s = transmission(delta, delta, 1.0, kb, kw)
        assert _half_max_width(delta, s) == pytest.approx(detector_bandwidth(kb, kw), rel=1e-3)


class TestTransmission:
    def test_resonant(self):
        assert transmission(0.0, 0.0, 1.0, MHZ, 2 * MHZ) == pytest.approx(1.0, abs=1e-15)

    def test_off_resonant_limit(self):
        assert transmission(1e6 * MHZ, 0.0, 1.0, MHZ, 2 * MHZ) < 1e-10

    def test_zero_detuning_equals_transfer(self):
        c = np.linspace(0, 8, 81)
        np.testing.assert_allclose(transmission(0.0, 0.0, c, MHZ, 3 * MHZ), transfer_efficiency(c), atol=1e-12)

    def test_rejects_bad_kappa(self):
        with pytest.raises(ValueError):
            transmission(0.0, 0.0, 1.0, -1.0, 1.0)


class TestQubitEfficiency:
    def test_smpd1(self):
        assert qubit_efficiency(37e-6, 10e-6) == pytest.approx(0.876, abs=5e-4)

    def test_smpd2(self):
        assert qubit_efficiency(15e-6, 10e-6) == pytest.approx(0.729, abs=1e-3)

    def test_short_window_limit(self):
        assert qubit_efficiency(1.0, 1e-6) == pytest.approx(1.0, abs=1e-6)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            qubit_efficiency(0.0, 1.0)


class TestBudgets:
    def test_smpd1_efficiency(self, smpd1):
        d = smpd1.device
        b = efficiency_budget(d, smpd1.timing, optimal_lossy_cooperativity(d.kappa_b_int, d.kappa_b_ext))
        assert (b.eta_4wm, b.eta_ro) == (pytest.approx(0.86, abs=1e-3), 0.73)
        assert b.eta_d == pytest.approx(0.84, abs=1e-3)
        assert b.eta_qubit == pytest.approx(0.876, abs=1e-3)
        assert b.eta_total == pytest.approx(0.46, abs=0.01)

    def test_smpd2_efficiency(self, smpd2):
        d = smpd2.device
        b = efficiency_budget(d, smpd2.timing, optimal_lossy_cooperativity(d.kappa_b_int, d.kappa_b_ext))
        got = [round(v, 2) for v in (b.eta_4wm, b.eta_ro, b.eta_d, b.eta_qubit)]
        assert got == [0.69, 0.90, 0.79, 0.73]
        assert b.eta_total == pytest.approx(0.358, abs=0.005)

    def test_zero_cooperativity(self, smpd1):
        assert efficiency_budget(smpd1.device, smpd1.timing, 0.0).eta_total == 0.0

    def test_budget_record_validation(self):
        with pytest.raises(ValueError):
            EfficiencyBudget(1.1, 1, 1, 1)
        with pytest.raises(ValueError):
            DarkCountBudget(-1, 0, 0)

    def test_operating_budget_matches_measurement(self, smpd1):
        b = efficiency_budget(smpd1.device, smpd1.timing, 1.16)
        op = operating_budget(b, 0.43)
        assert op.eta_total == pytest.approx(0.43, rel=1e-14)
        assert (op.eta_ro, op.eta_d, op.eta_qubit) == (b.eta_ro, b.eta_d, b.eta_qubit)
        with pytest.raises(ValueError):
            operating_budget(b, 0.99)


class TestOccupancy:
    def test_ten_millikelvin(self):
        assert thermal_occupancy(0.010, W_B) == pytest.approx(3e-15, rel=0.2)

    def test_inverse_at_line_temperature(self):
        assert equivalent_temperature(6.5e-5, W_B) == pytest.approx(0.035, rel=0.01)

    def test_zero_temperature_limit(self):
        assert thermal_occupancy(1e-4, W_B) == 0.0

    def test_round_trip(self):
        for n in (1e-12, 6.5e-5, 0.3, 40.0):
            assert thermal_occupancy(equivalent_temperature(n, W_B), W_B) == pytest.approx(n, rel=1e-12)

    def test_ln_argument_e(self):
        assert equivalent_temperature(1 / (math.e - 1), W_B) == pytest.approx(HBAR * W_B / K_B, rel=1e-14)

    def test_errors(self):
        with pytest.raises(ValueError):
            thermal_occupancy(0.0, W_B)
        with pytest.raises(ValueError):
            equivalent_temperature(0.0, W_B)


class TestDarkCounts:
    def test_alpha_qubit_smpd1_numbers(self):
        assert alpha_qubit(2e-4, 37e-6, 0.84, 1e-5, 11.9e-6) == pytest.approx(5.4, abs=0.05)

    def test_alpha_qubit_zero(self):
        assert alpha_qubit(0, 37e-6, 0.84, 0, 11.9e-6) == 0.0

    def test_alpha_qubit_smpd2(self, smpd2):
        d, cd = smpd2.device, derive_cycle(smpd2.timing)
        # the stated twin numbers give about 11; the published table rounds to 9
        assert alpha_qubit(d.p_eq, d.t1, cd.eta_d, d.p_reset, cd.t_cycle) == pytest.approx(9.0, abs=2.5)

    def test_alpha_thermal(self):
        kd = 0.57 * MHZ
        assert alpha_thermal(kd, 0.43, 0.0) == 0.0
        for n in (1e-6, 3e-4, 0.1):
            assert alpha_thermal(kd, 0.43, n) / n == pytest.approx(0.43 * kd / 4, rel=1e-14)
        assert alpha_thermal(kd, 0.43, 2.08e-4) == pytest.approx(80.0, rel=0.01)
        with pytest.raises(ValueError):
            alpha_thermal(kd, 1.2, 1e-4)

    def test_smpd1_total_at_80_thermal(self, smpd1):
        d, cd = smpd1.device, derive_cycle(smpd1.timing)
        kd, eta = 0.57 * MHZ, 0.43
        nbar = 80.0 / (kd * eta / 4)
        env = Environment(equivalent_temperature(nbar, d.omega_b))
        b = dark_budget(d, cd, env, kd, eta)
        assert b.alpha_th == pytest.approx(80.0, rel=1e-9)
        assert b.alpha_total == pytest.approx(85.0, abs=1.0)

    def test_smpd2_total(self, smpd2):
        d, cd = smpd2.device, derive_cycle(smpd2.timing)
        kd = detector_bandwidth(d.kappa_b, d.kappa_w)
        b = dark_budget(d, cd, smpd2.environment, kd, smpd2.measured.eta)
        assert b.alpha_4wm == 2.0
        assert b.alpha_th == pytest.approx(90.0, abs=1.0)
        assert b.alpha_total == pytest.approx(103.0, abs=5.0)
        assert b.alpha_total == pytest.approx(101.0, abs=5.0)

    def test_all_sources_off(self, smpd1):
        d = with_overrides(smpd1.device, p_eq=0.0, p_reset=0.0, alpha_4wm=0.0)
        b = dark_budget(d, derive_cycle(smpd1.timing), Environment(None), MHZ, 0.5)
        assert b.alpha_total == 0.0


class TestNoiseEquivalentPower:
    OMEGA = W_B

    def test_snr_zero_power(self):
        assert snr(0.0, 1.0, 85, 0.43, self.OMEGA) == 0.0

    def test_snr_at_nep_is_one(self):
        for t in (1e-3, 1.0, 300.0):
            p = nep(t, 85.0, 0.43, self.OMEGA)
            assert snr(p, t, 85.0, 0.43, self.OMEGA) == pytest.approx(1.0, abs=1e-9)

    def test_snr_scales_as_sqrt_t_without_dark(self):
        a = snr(1e-21, 1.0, 0.0, 0.43, self.OMEGA)
        b = snr(1e-21, 2.0, 0.0, 0.43, self.OMEGA)
        assert b / a == pytest.approx(math.sqrt(2), rel=1e-14)

    def test_nep_without_dark(self):
        assert nep(2.0, 0.0, 0.5, self.OMEGA) == pytest.approx(HBAR * self.OMEGA / (2.0 * 0.5), rel=1e-14)

    def test_nep_one_second(self):
        assert nep(1.0, 85.0, 0.43, self.OMEGA) == pytest.approx(1.0e-22, rel=0.06)

    def test_nep_asymptotic(self):
        alpha = 85.0
        t = 1e4 / alpha
        full = nep(t, alpha, 0.43, self.OMEGA)
        asym = HBAR * self.OMEGA * math.sqrt(alpha) / (0.43 * math.sqrt(t))
        assert full == pytest.approx(asym, rel=0.01)

    def test_nep_rejects_zero_eta(self):
        with pytest.raises(ValueError):
            nep(1.0, 1.0, 0.0, self.OMEGA)

    def test_sensitivity_examples(self):
        assert sensitivity(85, 0.43, self.OMEGA) == pytest.approx(0.99e-22, rel=0.01)
        assert sensitivity(125, 0.41, TWO_PI * 6.9697e9) == pytest.approx(1.26e-22, rel=0.01)
        assert sensitivity(0, 0.41, self.OMEGA) == 0.0

    def test_report(self):
        rep = sensitivity_report(85.0, 0.43, self.OMEGA)
        assert rep.sensitivity == sensitivity(85.0, 0.43, self.OMEGA)
        assert rep.nep_at[1.0] == pytest.approx(rep.sensitivity, rel=0.06)
        times = sorted(rep.nep_at)
        assert all(rep.nep_at[a] > rep.nep_at[b] for a, b in zip(times, times[1:]))
