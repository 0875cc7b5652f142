"""Small deterministic fitters: straight line, Lorentzian peak, 1-d maximisation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .exceptions import NumericalError

__all__ = ["LinearModel", "LorentzianModel", "fit_linear", "fit_lorentzian", "golden_section_max"]


@dataclass(frozen=True)
class LinearModel:
    slope: float
    intercept: float
    residual_norm: float
    slope_stderr: float

    def predict(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept


def fit_linear(x, y, weights=None) -> LinearModel:
    """Ordinary (or weighted) least-squares line through ``(x, y)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if x.size < 2:
        raise ValueError("need at least two points for a line")
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=float)
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative and not all zero")
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    dx = x - xm
    sxx = (w * dx * dx).sum()
    if sxx <= 0 or not math.isfinite(sxx):
        raise ValueError("degenerate fit: all x values are equal")
    slope = (w * dx * (y - ym)).sum() / sxx
    intercept = ym - slope * xm
    resid = y - (slope * x + intercept)
    rss = float((w * resid * resid).sum())
    dof = x.size - 2
    stderr = math.sqrt(rss / dof / sxx) if dof > 0 else float("nan")
    return LinearModel(float(slope), float(intercept), math.sqrt(rss), stderr)


@dataclass(frozen=True)
class LorentzianModel:
    center: float
    fwhm: float
    peak: float
    residual_norm: float
    iterations: int

    def predict(self, x):
        z = (np.asarray(x, dtype=float) - self.center) / (0.5 * self.fwhm)
        return self.peak / (1.0 + z * z)


def _lorentz(p, x):
    a, x0, g = p
    z = (x - x0) / g
    return a / (1.0 + z * z)


def _lorentz_jac(p, x):
    a, x0, g = p
    z = (x - x0) / g
    q = 1.0 + z * z
    return np.column_stack([1.0 / q, 2.0 * a * z / (g * q * q), 2.0 * a * z * z / (g * q * q)])


def fit_lorentzian(x, y, max_iter: int = 200, rtol: float = 1e-13) -> LorentzianModel:
    """Fit ``peak / (1 + ((x - center) / (fwhm/2))^2)`` by least squares.

    A coarse grid over centre and width (with the optimal peak solved in
    closed form for each cell) seeds a Gauss-Newton refinement with step
    halving.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 4:
        raise ValueError("need at least four (x, y) points")
    span = float(x.max() - x.min())
    if span <= 0:
        raise ValueError("x values must not all be equal")

    # coarse grid
    i_max = int(np.argmax(y))
    spacing = span / (x.size - 1)
    centers = x[i_max] + spacing * np.linspace(-2.0, 2.0, 21)
    widths = span * np.geomspace(1e-3, 2.0, 60)
    best = None
    for x0 in centers:
        for g in widths:
            shape = 1.0 / (1.0 + ((x - x0) / g) ** 2)
            a = float(shape @ y / (shape @ shape))
            r = float(np.sum((y - a * shape) ** 2))
            if best is None or r < best[0]:
                best = (r, np.array([a, x0, g]))
    rss, p = best

    it = 0
    for it in range(1, max_iter + 1):
        resid = y - _lorentz(p, x)
        jac = _lorentz_jac(p, x)
        step, *_ = np.linalg.lstsq(jac, resid, rcond=None)
        lam = 1.0
        while True:
            trial = p + lam * step
            if trial[2] > 0:
                r_trial = float(np.sum((y - _lorentz(trial, x)) ** 2))
                if r_trial <= rss:
                    break
            lam *= 0.5
            if lam < 1e-12:
                trial, r_trial = p, rss
                break
        converged = np.all(np.abs(trial - p) <= rtol * np.maximum(np.abs(trial), np.array([1e-300, span, span])))
        p, rss = trial, r_trial
        if converged:
            break
    else:
        raise NumericalError(f"Lorentzian fit did not converge after {max_iter} iterations (residual {math.sqrt(rss):.3e})")
    a, x0, g = p
    return LorentzianModel(float(x0), float(2.0 * g), float(a), math.sqrt(rss), it)


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def golden_section_max(f: Callable[[float], float], a: float, b: float, tol: float = 1e-12, max_iter: int = 500) -> float:
    """Maximiser of a unimodal ``f`` on ``[a, b]`` to absolute tolerance ``tol * (b - a)``."""
    if not b > a:
        raise ValueError("need a < b")
    width = b - a
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= tol * width:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return c if fc >= fd else d
