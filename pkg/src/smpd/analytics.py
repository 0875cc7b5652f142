"""Closed-form detector model: conversion efficiency, bandwidth, budgets, occupancy, NEP.

Functions that are naturally swept accept numpy arrays as well as scalars and
return a float for scalar input. Out-of-range arguments raise ``ValueError``;
nothing is silently clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .constants import HBAR, K_B
from .device import (
    CycleDerived,
    CycleTiming,
    DeviceParams,
    Environment,
    PumpConfig,
    derive_cycle,
)

__all__ = [
    "EfficiencyBudget",
    "DarkCountBudget",
    "SensitivityReport",
    "cooperativity",
    "external_cooperativity",
    "transfer_efficiency",
    "transfer_efficiency_lossy",
    "optimal_lossy_cooperativity",
    "detector_bandwidth",
    "transmission",
    "qubit_efficiency",
    "efficiency_budget",
    "operating_budget",
    "thermal_occupancy",
    "equivalent_temperature",
    "alpha_qubit",
    "alpha_thermal",
    "dark_budget",
    "snr",
    "nep",
    "sensitivity",
    "sensitivity_report",
]


def _scalar_or_array(x):
    x = np.asarray(x, dtype=float)
    return float(x) if x.ndim == 0 else x


def _check(condition, message: str) -> None:
    if not np.all(condition):
        raise ValueError(message)


@dataclass(frozen=True)
class EfficiencyBudget:
    eta_4wm: float
    eta_ro: float
    eta_d: float
    eta_qubit: float

    def __post_init__(self) -> None:
        for name in ("eta_4wm", "eta_ro", "eta_d", "eta_qubit"):
            value = getattr(self, name)
            _check(0.0 <= value <= 1.0, f"{name} must lie in [0, 1], got {value!r}")

    @property
    def eta_total(self) -> float:
        return self.eta_4wm * self.eta_ro * self.eta_d * self.eta_qubit

    @property
    def eta_window(self) -> float:
        """Per-photon click probability inside the detection window (duty cycle excluded)."""
        return self.eta_4wm * self.eta_ro * self.eta_qubit


@dataclass(frozen=True)
class DarkCountBudget:
    alpha_qubit: float
    alpha_4wm: float
    alpha_th: float

    def __post_init__(self) -> None:
        for name in ("alpha_qubit", "alpha_4wm", "alpha_th"):
            _check(getattr(self, name) >= 0, f"{name} must be non-negative")

    @property
    def alpha_total(self) -> float:
        return self.alpha_qubit + self.alpha_4wm + self.alpha_th


@dataclass(frozen=True)
class SensitivityReport:
    omega: float
    alpha: float
    eta: float
    sensitivity: float
    nep_at: dict[float, float] = field(default_factory=dict)


def cooperativity(p: PumpConfig, d: DeviceParams) -> float:
    """Four-wave-mixing cooperativity with total (external + internal) linewidths."""
    denom = d.kappa_b * d.kappa_w
    if denom <= 0:
        raise ValueError("cooperativity needs nonzero kappa_b and kappa_w")
    return 4.0 * p.xi**2 * d.chi_b * d.chi_w / denom


def external_cooperativity(p: PumpConfig, d: DeviceParams) -> float:
    """Cooperativity normalised to the buffer's external coupling rate.

    This is the parameter of :func:`transfer_efficiency_lossy`; it equals
    ``cooperativity * kappa_b / kappa_b_ext``.
    """
    return 4.0 * p.xi**2 * d.chi_b * d.chi_w / (d.kappa_b_ext * d.kappa_w)


def transfer_efficiency(c):
    c = np.asarray(c, dtype=float)
    _check(c >= 0, "cooperativity must be non-negative")
    return _scalar_or_array(4.0 * c / (1.0 + c) ** 2)


def transfer_efficiency_lossy(c, k_int, k_ext):
    """Buffer-to-qubit conversion with buffer internal loss ``k_int``.

    ``c`` is the external cooperativity. Bounded by ``1 / (1 + k_int/k_ext)``,
    reached at ``c = 1 + k_int/k_ext``.
    """
    c = np.asarray(c, dtype=float)
    _check(c >= 0, "cooperativity must be non-negative")
    _check(np.asarray(k_ext) > 0, "k_ext must be positive")
    _check(np.asarray(k_int) >= 0, "k_int must be non-negative")
    r = np.asarray(k_int, dtype=float) / np.asarray(k_ext, dtype=float)
    return _scalar_or_array(4.0 * c / (r + 1.0 + c) ** 2)


def optimal_lossy_cooperativity(k_int: float, k_ext: float) -> float:
    if k_ext <= 0:
        raise ValueError("k_ext must be positive")
    return 1.0 + k_int / k_ext


def detector_bandwidth(kb, kw):
    """Full width at half maximum (rad/s) of the conversion line at unit cooperativity."""
    kb = np.asarray(kb, dtype=float)
    kw = np.asarray(kw, dtype=float)
    _check((kb > 0) & (kw > 0), "kb and kw must be positive")
    half_diff_sq = ((kb - kw) / 2.0) ** 2
    inner = np.sqrt((kb * kw) ** 2 + half_diff_sq**2) - half_diff_sq
    return _scalar_or_array(np.sqrt(2.0) * np.sqrt(inner))


def transmission(delta_b, delta_w, c, kb, kw):
    """|S21|^2 of the lossless two-mode converter for buffer/waste detunings (rad/s)."""
    kb = np.asarray(kb, dtype=float)
    kw = np.asarray(kw, dtype=float)
    c = np.asarray(c, dtype=float)
    _check((kb > 0) & (kw > 0), "kb and kw must be positive")
    _check(c >= 0, "cooperativity must be non-negative")
    db = np.asarray(delta_b, dtype=float)
    dw = np.asarray(delta_w, dtype=float)
    denom = -4.0 * db * dw / (kb * kw) + 2j * db / kb + 2j * dw / kw + 1.0 + c
    return _scalar_or_array(4.0 * c / np.abs(denom) ** 2)


def qubit_efficiency(t1, td):
    """Mean survival probability of an excitation created uniformly within the window."""
    t1 = np.asarray(t1, dtype=float)
    td = np.asarray(td, dtype=float)
    _check((t1 > 0) & (td > 0), "t1 and td must be positive")
    return _scalar_or_array(-(t1 / td) * np.expm1(-td / t1))


def efficiency_budget(d: DeviceParams, t: CycleTiming, c: float) -> EfficiencyBudget:
    """Efficiency factors at external cooperativity ``c``."""
    return EfficiencyBudget(
        eta_4wm=transfer_efficiency_lossy(c, d.kappa_b_int, d.kappa_b_ext),
        eta_ro=d.eta_ro,
        eta_d=derive_cycle(t).eta_d,
        eta_qubit=qubit_efficiency(d.t1, t.t_d),
    )


def operating_budget(budget: EfficiencyBudget, eta_measured: float) -> EfficiencyBudget:
    """Rescale the transfer factor so the product matches a measured efficiency.

    The shortfall is attributed to the pump operating point (the conversion
    factor), the only factor not independently calibrated.
    """
    other = budget.eta_ro * budget.eta_d * budget.eta_qubit
    if other <= 0:
        raise ValueError("cannot calibrate a budget with a zero readout/duty/qubit factor")
    eta_4wm = eta_measured / other
    if not 0.0 <= eta_4wm <= 1.0:
        raise ValueError(f"measured efficiency {eta_measured} implies transfer efficiency {eta_4wm:.3f} outside [0, 1]")
    return EfficiencyBudget(eta_4wm, budget.eta_ro, budget.eta_d, budget.eta_qubit)


def thermal_occupancy(temperature, omega):
    """Bose-Einstein mean photon number per mode."""
    temperature = np.asarray(temperature, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check(temperature > 0, "temperature must be positive")
    _check(omega > 0, "omega must be positive")
    x = HBAR * omega / (K_B * temperature)
    with np.errstate(over="ignore"):
        n = 1.0 / np.expm1(x)
    return _scalar_or_array(n)


def equivalent_temperature(nbar, omega):
    """Temperature (K) whose Bose-Einstein occupancy at ``omega`` equals ``nbar``."""
    nbar = np.asarray(nbar, dtype=float)
    omega = np.asarray(omega, dtype=float)
    _check(nbar > 0, "nbar must be positive")
    _check(omega > 0, "omega must be positive")
    return _scalar_or_array(HBAR * omega / (K_B * np.log1p(1.0 / nbar)))


def alpha_qubit(p_eq: float, t1: float, eta_d: float, p_reset: float, t_cycle: float) -> float:
    """Dark rate from qubit re-thermalisation during the window plus imperfect reset."""
    if t1 <= 0 or t_cycle <= 0:
        raise ValueError("t1 and t_cycle must be positive")
    for name, value in (("p_eq", p_eq), ("p_reset", p_reset), ("eta_d", eta_d)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
    return p_eq / t1 * eta_d + p_reset / t_cycle


def alpha_thermal(kd, eta, nbar):
    """Dark rate from thermal photons of the input line integrated over the detector line."""
    kd = np.asarray(kd, dtype=float)
    eta = np.asarray(eta, dtype=float)
    nbar = np.asarray(nbar, dtype=float)
    _check(kd > 0, "kd must be positive")
    _check((eta >= 0) & (eta <= 1), "eta must lie in [0, 1]")
    _check(nbar >= 0, "nbar must be non-negative")
    return _scalar_or_array(kd / 4.0 * eta * nbar)


def dark_budget(d: DeviceParams, cd: CycleDerived, env: Environment, kd: float, eta: float) -> DarkCountBudget:
    nbar = 0.0 if env.temperature is None else thermal_occupancy(env.temperature, d.omega_b)
    return DarkCountBudget(
        alpha_qubit=alpha_qubit(d.p_eq, d.t1, cd.eta_d, d.p_reset, cd.t_cycle),
        alpha_4wm=d.alpha_4wm,
        alpha_th=alpha_thermal(kd, eta, nbar),
    )


def snr(power, t, alpha, eta, omega):
    t = np.asarray(t, dtype=float)
    _check(t > 0, "integration time must be positive")
    _check(np.asarray(power) >= 0, "power must be non-negative")
    _check(np.asarray(alpha) >= 0, "alpha must be non-negative")
    # shot noise of the "on" counts, with the dark rate assumed known
    signal = np.asarray(eta, dtype=float) * np.asarray(power, dtype=float) * t / (HBAR * np.asarray(omega, dtype=float))
    noise = np.sqrt(signal + np.asarray(alpha, dtype=float) * t)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(noise > 0, signal / noise, 0.0)
    return _scalar_or_array(out)


def nep(t, alpha, eta, omega):
    """Power giving unit SNR after integrating for ``t`` seconds (W)."""
    t = np.asarray(t, dtype=float)
    eta = np.asarray(eta, dtype=float)
    _check(t > 0, "integration time must be positive")
    _check(eta > 0, "eta must be positive")
    _check(np.asarray(alpha) >= 0, "alpha must be non-negative")
    value = HBAR * np.asarray(omega, dtype=float) * (1.0 + np.sqrt(1.0 + 4.0 * t * np.asarray(alpha))) / (2.0 * t * eta)
    return _scalar_or_array(value)


def sensitivity(alpha, eta, omega):
    """Power sensitivity hbar*omega*sqrt(alpha)/eta (W/sqrt(Hz))."""
    eta = np.asarray(eta, dtype=float)
    _check(eta > 0, "eta must be positive")
    _check(np.asarray(alpha) >= 0, "alpha must be non-negative")
    return _scalar_or_array(HBAR * np.asarray(omega, dtype=float) * np.sqrt(alpha) / eta)


def sensitivity_report(alpha: float, eta: float, omega: float, times: Iterable[float] = (1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0)) -> SensitivityReport:
    return SensitivityReport(
        omega=omega,
        alpha=alpha,
        eta=eta,
        sensitivity=sensitivity(alpha, eta, omega),
        nep_at={float(t): nep(t, alpha, eta, omega) for t in times},
    )
