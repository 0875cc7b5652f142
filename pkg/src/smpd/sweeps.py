"""Parameter sweeps, the detection-window optimiser and sensitivity projections."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .analytics import (
    DarkCountBudget,
    EfficiencyBudget,
    SensitivityReport,
    alpha_qubit,
    alpha_thermal,
    cooperativity,
    detector_bandwidth,
    efficiency_budget,
    external_cooperativity,
    optimal_lossy_cooperativity,
    qubit_efficiency,
    sensitivity_report,
    thermal_occupancy,
    transfer_efficiency_lossy,
    transmission,
)
from .device import CycleDerived, CycleTiming, DeviceConfig, DeviceParams, PumpConfig, derive_cycle, with_overrides
from .fitting import fit_linear, fit_lorentzian, golden_section_max
from .io import csv_text

__all__ = [
    "SweepResult",
    "OptimalWindow",
    "Baseline",
    "Scenario",
    "sweep_pump_amplitude",
    "sweep_input_frequency",
    "sweep_temperature",
    "broadened",
    "half_max_width",
    "window_product",
    "optimal_detection_time",
    "project_budget",
    "project_sensitivity",
]

THERMOMETER_MIN_K = 0.040
BROADENING_FWHM = 2 * math.pi * 100e3


@dataclass(frozen=True)
class SweepResult:
    """One swept metric with its fit.

    ``fit`` holds the fitted (or extracted) parameters; ``residual_norm`` is
    the fit residual, NaN when no fit was performed.
    """

    axis_name: str
    axis: np.ndarray
    metric_name: str
    metric: np.ndarray
    fit: dict[str, float]
    residual_norm: float
    secondary: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        axis = np.asarray(self.axis, dtype=float)
        if axis.ndim != 1 or axis.size < 2:
            raise ValueError("sweep axis needs at least two points")
        if not np.all(np.diff(axis) > 0):
            raise ValueError("sweep axis must be strictly increasing")
        if np.asarray(self.metric).shape != axis.shape:
            raise ValueError("metric and axis differ in shape")

    def table(self) -> tuple[list[str], list[np.ndarray]]:
        """Axis, secondary columns, metric, then the fit parameters repeated per row."""
        names = [self.axis_name, *self.secondary, self.metric_name]
        cols = [self.axis, *self.secondary.values(), self.metric]
        n = len(self.axis)
        for key, value in self.fit.items():
            names.append(f"fit_{key}")
            cols.append(np.full(n, value, dtype=float))
        names.append("fit_residual_norm")
        cols.append(np.full(n, self.residual_norm))
        return names, cols

    def csv(self) -> str:
        return csv_text(*self.table())


def _ascending(x, name: str, strict: bool = True) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError(f"{name} must be a 1-d array with at least two values")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} must be finite")
    steps = np.diff(x)
    if np.any(steps <= 0 if strict else steps < 0):
        raise ValueError(f"{name} must be strictly ascending")
    return x


def sweep_pump_amplitude(xis, d: DeviceParams, t: CycleTiming) -> SweepResult:
    """Buffer-to-qubit conversion versus pump amplitude.

    The cooperativity (external buffer linewidth) is the primary axis and
    ``xi`` a secondary column. The grid maximum is reported next to the
    optimum predicted from the loss ratio.
    """
    xis = _ascending(xis, "xis")
    if xis[0] < 0:
        raise ValueError("xis must be non-negative")
    c_ext = xis**2 * external_cooperativity(PumpConfig(1.0), d)
    c_tot = xis**2 * cooperativity(PumpConfig(1.0), d)
    eta = transfer_efficiency_lossy(c_ext, d.kappa_b_int, d.kappa_b_ext)
    base = efficiency_budget(d, t, 0.0)
    i = int(np.argmax(eta))
    fit = {
        "peak": float(eta[i]),
        "c_at_peak": float(c_ext[i]),
        "xi_at_peak": float(xis[i]),
        "c_optimal": optimal_lossy_cooperativity(d.kappa_b_int, d.kappa_b_ext),
        "xi_optimal": math.sqrt(optimal_lossy_cooperativity(d.kappa_b_int, d.kappa_b_ext) / external_cooperativity(PumpConfig(1.0), d)),
    }
    return SweepResult(
        axis_name="cooperativity_ext",
        axis=c_ext,
        metric_name="eta_4wm",
        metric=np.asarray(eta, dtype=float),
        fit=fit,
        residual_norm=float("nan"),
        secondary={
            "xi": xis,
            "cooperativity": c_tot,
            "eta_total": eta * base.eta_ro * base.eta_d * base.eta_qubit,
        },
    )


def broadened(f, deltas, fwhm: float, order: int = 400) -> np.ndarray:
    """Convolution of ``f`` with a unit-area Lorentzian of full width ``fwhm``.

    With ``x = g tan(theta)`` the Lorentzian weight becomes ``d(theta)/pi``,
    so the integral is a plain Gauss-Legendre sum over ``theta``.
    """
    if fwhm <= 0:
        raise ValueError("broadening width must be positive")
    deltas = np.asarray(deltas, dtype=float)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    theta = 0.5 * math.pi * nodes
    shift = 0.5 * fwhm * np.tan(theta)
    vals = f(deltas[:, None] - shift[None, :])
    return vals @ weights * 0.5


def half_max_width(x, y) -> float:
    """Full width at half maximum by linear interpolation of the crossings."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise ValueError("the sweep does not reach half maximum on both sides")
    j = left[-1]
    k = i + right[0]
    xl = x[j] + (half - y[j]) * (x[j + 1] - x[j]) / (y[j + 1] - y[j])
    xr = x[k - 1] + (half - y[k - 1]) * (x[k] - x[k - 1]) / (y[k] - y[k - 1])
    return float(xr - xl)


def _crossing(f, a: float, b: float, level: float) -> float:
    """Bisection for ``f(x) = level`` with ``f(a) - level`` and ``f(b) - level`` of opposite sign."""
    fa = f(a) - level
    for _ in range(200):
        m = 0.5 * (a + b)
        if m in (a, b):
            break
        fm = f(m) - level
        if (fm < 0) == (fa < 0):
            a, fa = m, fm
        else:
            b = m
    return 0.5 * (a + b)


def sweep_input_frequency(
    deltas,
    d: DeviceParams,
    p: PumpConfig,
    t: CycleTiming,
    broadening: float | None = None,
    peak_efficiency: float | None = None,
) -> SweepResult:
    """Inferred detector efficiency versus input detuning (rad/s).

    The conversion line is scaled by readout, duty cycle and qubit factors.
    ``broadening`` (rad/s FWHM) convolves it with a Lorentzian;
    ``peak_efficiency`` rescales the curve so its maximum equals a measured
    efficiency.

    ``fit["fwhm"]`` is the width between the half-maximum crossings, refined
    by bisection on the model. The line is not exactly Lorentzian (its
    denominator is quartic in the detuning), so the least-squares Lorentzian
    parameters are reported separately with their residual.
    """
    deltas = _ascending(deltas, "deltas")
    if not np.allclose(deltas, -deltas[::-1], rtol=0, atol=1e-9 * np.max(np.abs(deltas))):
        raise ValueError("deltas must be symmetric about zero")
    c = cooperativity(p, d)
    cd = derive_cycle(t)
    scale = d.kappa_b_ext / d.kappa_b * d.eta_ro * cd.eta_d * qubit_efficiency(d.t1, t.t_d)

    def line(x):
        return scale * transmission(x, x, c, d.kappa_b, d.kappa_w)

    if broadening:
        def model(x):
            return broadened(line, np.atleast_1d(x), broadening)
    else:
        model = line
    metric = np.asarray(model(deltas), dtype=float)
    norm = 1.0
    if peak_efficiency is not None:
        if not 0 < peak_efficiency <= 1:
            raise ValueError("peak_efficiency must lie in (0, 1]")
        norm = peak_efficiency / metric.max()
        metric = metric * norm

    i = int(np.argmax(metric))
    half = 0.5 * metric[i]
    left = np.nonzero(metric[:i] < half)[0]
    right = np.nonzero(metric[i:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise ValueError("the sweep does not reach half maximum on both sides")
    j, k = left[-1], i + right[0]

    def g(x):
        return float(np.asarray(model(x)).ravel()[0]) * norm

    fwhm = _crossing(g, deltas[k], deltas[k - 1], half) - _crossing(g, deltas[j], deltas[j + 1], half)

    lor = fit_lorentzian(deltas, metric)
    fit = {
        "fwhm": float(fwhm),
        "peak": float(metric[i]),
        "center": float(deltas[i]),
        "fwhm_theory": float(detector_bandwidth(d.kappa_b, d.kappa_w)),
        "lorentzian_center": lor.center,
        "lorentzian_fwhm": lor.fwhm,
        "lorentzian_peak": lor.peak,
    }
    return SweepResult("detuning_rad_s", deltas, "efficiency", metric, fit, lor.residual_norm)


def sweep_temperature(
    temps,
    d: DeviceParams,
    cd: CycleDerived,
    kd: float,
    eta: float,
    mc_cycles: int | None = None,
    seed: int = 0,
    workers: int = 1,
) -> SweepResult:
    """Thermal dark rate versus line temperature, fitted linearly against occupancy.

    Without ``mc_cycles`` the rates are the analytic ones. With it, each point
    is a Monte-Carlo estimate over ``mc_cycles`` cycles and the fit is
    weighted by the binomial spread of the fitted counts. Temperatures below
    40 mK are flagged (and warned about) as outside the calibrated
    thermometer range.
    """
    temps = _ascending(temps, "temps", strict=False)
    if np.all(temps == temps[0]):
        raise ValueError("degenerate temperature sweep: all temperatures are equal")
    temps = _ascending(temps, "temps")
    valid = temps >= THERMOMETER_MIN_K
    if not np.all(valid):
        warnings.warn(
            f"{int((~valid).sum())} temperature(s) below {THERMOMETER_MIN_K * 1e3:.0f} mK are outside the calibrated thermometer range",
            stacklevel=2,
        )
    nbar = np.asarray(thermal_occupancy(temps, d.omega_b), dtype=float)
    alpha = np.asarray(alpha_thermal(kd, eta, nbar), dtype=float)
    if mc_cycles:
        from .stochastic import fit_count_line

        points = _mc_thermal(alpha, d, cd, int(mc_cycles), seed, workers)
        alpha = np.array([p.detected_rate for p in points])
        line = fit_count_line(nbar, points)
    else:
        line = fit_linear(nbar, alpha)
    fit = {
        "slope": line.slope,
        "intercept": line.intercept,
        "slope_stderr": line.slope_stderr,
        "slope_theory": kd * eta / 4.0,
    }
    return SweepResult(
        "temperature_k", temps, "alpha_th_per_s", alpha, fit, line.residual_norm,
        secondary={"nbar": nbar, "thermometer_valid": valid.astype(float)},
    )


def _mc_thermal(alpha, d: DeviceParams, cd: CycleDerived, n_cycles: int, seed: int, workers: int):
    from .stochastic import SimConfig, measure_rate

    t = CycleTiming(t_d=cd.eta_d * cd.t_cycle, t_m=(1.0 - cd.eta_d) * cd.t_cycle)
    quiet = EfficiencyBudget(1.0, 1.0, 1.0, 1.0)
    bare = with_overrides(d, p_reset=0.0)
    return [
        measure_rate(SimConfig(n_cycles, seed, quiet, dark=float(a), workers=workers), bare, t, stream=i + 1)
        for i, a in enumerate(alpha)
    ]


def window_product(t_d, overhead: float, t1: float):
    """Duty cycle times qubit survival for a window ``t_d`` and blind time ``overhead``."""
    t_d = np.asarray(t_d, dtype=float)
    x = t_d / t1
    with np.errstate(invalid="ignore", divide="ignore"):
        # mean survival over the window, -expm1(-x)/x, tends to 1 as x -> 0
        survival = np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0)
        duty = np.where(t_d > 0, t_d / (overhead + t_d), 1.0 if overhead == 0 else 0.0)
    val = duty * survival
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True)
class OptimalWindow:
    closed_form: float
    numeric: float
    product_closed_form: float
    product_numeric: float


def optimal_detection_time(d: DeviceParams, t: CycleTiming) -> OptimalWindow:
    """Detection window maximising duty cycle times qubit survival.

    The small-window approximation gives ``sqrt(2 * overhead * T1)``; the
    exact objective is maximised by golden-section search, with the
    closed-form value kept as a candidate.
    """
    overhead = t.overhead
    t1 = d.t1
    closed = math.sqrt(2.0 * overhead * t1)

    def f(x):
        return window_product(x, overhead, t1)

    hi = max(10.0 * t1, 4.0 * closed)
    best = golden_section_max(f, 0.0, hi, tol=1e-13)
    if f(closed) > f(best):
        best = closed
    return OptimalWindow(closed, best, f(closed), f(best))


@dataclass(frozen=True)
class Baseline:
    """Measured operating point the projections start from."""

    device: DeviceParams
    timing: CycleTiming
    eta: float
    alpha: float
    kappa_d: float
    omega: float

    @classmethod
    def from_config(cls, cfg: DeviceConfig) -> "Baseline":
        m = cfg.measured
        if m.eta is None or m.alpha is None or m.kappa_d is None:
            raise ValueError("configuration lacks a measured operating point (eta, alpha, kappa_d)")
        return cls(cfg.device, cfg.timing, m.eta, m.alpha, m.kappa_d, cfg.device.omega_b)


@dataclass(frozen=True)
class Scenario:
    """Device changes applied to a baseline.

    ``ideal_limit`` sets the efficiency to the conversion factor alone (all
    other losses removed); ``nbar_scale`` scales the line occupancy.
    """

    name: str = "identity"
    overrides: Mapping[str, float] = field(default_factory=dict)
    ideal_limit: bool = False
    nbar_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.nbar_scale < 0:
            raise ValueError("nbar_scale must be non-negative")

    def device(self, base: DeviceParams) -> DeviceParams:
        return with_overrides(base, **dict(self.overrides))


def _intrinsic_alpha(d: DeviceParams, t: CycleTiming) -> tuple[float, float]:
    cd = derive_cycle(t)
    return alpha_qubit(d.p_eq, d.t1, cd.eta_d, d.p_reset, cd.t_cycle), d.alpha_4wm


def _model_eta(d: DeviceParams, t: CycleTiming) -> EfficiencyBudget:
    return efficiency_budget(d, t, optimal_lossy_cooperativity(d.kappa_b_int, d.kappa_b_ext))


def project_budget(sc: Scenario, baseline: Baseline) -> tuple[float, DarkCountBudget]:
    """Efficiency and dark budget of ``baseline`` modified by ``sc``.

    The line occupancy is inferred from the baseline's thermal share and held
    fixed; the thermal rate then follows the new efficiency.
    """
    a_q0, a_4 = _intrinsic_alpha(baseline.device, baseline.timing)
    a_th0 = baseline.alpha - a_q0 - a_4
    if a_th0 < 0:
        raise ValueError(
            f"measured dark rate {baseline.alpha:g}/s is below the modelled intrinsic rate {a_q0 + a_4:g}/s"
        )
    nbar = a_th0 / (baseline.kappa_d / 4.0 * baseline.eta)

    d = sc.device(baseline.device)
    new = _model_eta(d, baseline.timing)
    if sc.ideal_limit:
        eta = new.eta_4wm
    else:
        eta = baseline.eta * new.eta_total / _model_eta(baseline.device, baseline.timing).eta_total
    if not 0 < eta <= 1:
        raise ValueError(f"projected efficiency {eta:g} outside (0, 1]")
    a_q, a_4 = _intrinsic_alpha(d, baseline.timing)
    a_th = alpha_thermal(baseline.kappa_d, eta, nbar * sc.nbar_scale)
    return eta, DarkCountBudget(a_q, a_4, a_th)


def project_sensitivity(sc: Scenario, baseline: Baseline) -> SensitivityReport:
    eta, dark = project_budget(sc, baseline)
    return sensitivity_report(dark.alpha_total, eta, baseline.omega)
