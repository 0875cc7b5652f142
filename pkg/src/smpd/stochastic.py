"""Seeded Monte-Carlo of the detect / measure / reset cycle.

Every cycle draws its random numbers from a Philox counter block addressed by
the global cycle index, so a run is a pure function of the seed and the
parameters: chunk size and worker count only change how the work is split.

Per cycle the composition is

* signal click with probability ``1 - exp(-eta_w * r * T_d)`` where ``eta_w``
  is the in-window efficiency ``eta_4wm * eta_ro * eta_qubit``;
* dark click with probability ``alpha * T_cycle``, split into the residual
  excitation left by the previous reset (``p_reset``) and everything else;
* an optional ground-state misread ``p_g1``.

A click triggers the conditional reset. Its first attempt is already part of
the average reset time in ``T_cycle``; each further attempt (failure
probability ``p_g1``) stretches the cycle by ``t_m + t_pi``. Cycle times are
accumulated in integer picoseconds.

With ``readout="cycle"`` the readout fidelity is applied per cycle to the
qubit state instead of being folded into the photon efficiency; the
saturated rate is then ``eta_ro / T_cycle``.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .analytics import DarkCountBudget, EfficiencyBudget
from .device import CycleTiming, DeviceParams, derive_cycle
from .fitting import LinearModel, fit_linear
from .io import write_summary

__all__ = [
    "SimConfig",
    "ClickRecord",
    "RateCurvePoint",
    "DarkSeries",
    "ResetStatistics",
    "simulate_run",
    "rate_curve",
    "measure_rate",
    "fit_count_line",
    "fit_rate_curve",
    "dark_series",
    "reset_statistics",
    "click_probability",
    "expected_rate",
    "click_record_bytes",
    "write_click_record",
    "read_click_record",
]

PS = 1e-12
READOUT_MODES = ("photon", "cycle")
_U53 = 2.0**-53
_MAGIC = b"SMPDCLK1"
_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sIIQQQQQQ32s")


@dataclass(frozen=True)
class SimConfig:
    """Monte-Carlo run parameters.

    ``dark`` is a :class:`DarkCountBudget`, a plain rate in 1/s, or ``None``
    for no dark counts at all (residual reset excitations included).
    ``workers`` only affects execution speed.
    """

    n_cycles: int
    seed: int
    efficiency: EfficiencyBudget
    dark: DarkCountBudget | float | None = None
    input_rate: float = 0.0
    chunk_size: int = 1 << 16
    p_g1: float = 0.0
    t_pi: float = 50e-9
    readout: str = "photon"
    workers: int = 1

    def __post_init__(self) -> None:
        if int(self.n_cycles) != self.n_cycles or self.n_cycles <= 0:
            raise ValueError("n_cycles must be a positive integer")
        if int(self.chunk_size) != self.chunk_size or self.chunk_size <= 0:
            raise ValueError("chunk_size must be a positive integer")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if not (self.input_rate >= 0 and math.isfinite(self.input_rate)):
            raise ValueError("input_rate must be finite and non-negative")
        if not 0.0 <= self.p_g1 < 1.0:
            raise ValueError("p_g1 must lie in [0, 1)")
        if self.t_pi < 0:
            raise ValueError("t_pi must be non-negative")
        if self.readout not in READOUT_MODES:
            raise ValueError(f"readout must be one of {READOUT_MODES}")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")
        if self.dark_rate < 0:
            raise ValueError("dark rate must be non-negative")

    @property
    def dark_rate(self) -> float:
        if self.dark is None:
            return 0.0
        if isinstance(self.dark, DarkCountBudget):
            return float(self.dark.alpha_total)
        return float(self.dark)

    def with_rate(self, rate: float) -> "SimConfig":
        return replace(self, input_rate=float(rate))


@dataclass(frozen=True)
class _Plan:
    """Per-cycle probabilities after composition, plus the timing grid."""

    key: int
    p_sig: float
    p_res: float
    p_other: float
    p_g1: float
    eta_ro: float
    cycle_mode: bool
    t_cycle_ps: int
    extra_ps: int


def _plan(cfg: SimConfig, d: DeviceParams, t: CycleTiming, sub: int = 0) -> _Plan:
    cd = derive_cycle(t)
    eff = cfg.efficiency
    cycle_mode = cfg.readout == "cycle"
    eta_w = eff.eta_4wm * eff.eta_qubit * (1.0 if cycle_mode else eff.eta_ro)
    p_sig = -math.expm1(-eta_w * cfg.input_rate * t.t_d)

    p_dark = cfg.dark_rate * cd.t_cycle
    if cycle_mode and p_dark > 0:
        if eff.eta_ro <= 0:
            raise ValueError("dark counts need a non-zero readout fidelity in cycle mode")
        p_dark /= eff.eta_ro
    p_res = d.p_reset if p_dark > 0 else 0.0
    if not 0.0 <= p_dark <= 1.0:
        raise ValueError(f"dark probability per cycle {p_dark:.4g} outside [0, 1]; dark rate too high for this cycle time")
    if p_dark < p_res:
        raise ValueError(
            f"dark probability per cycle {p_dark:.4g} is below the reset residual {p_res:.4g}; "
            "the dark-count model is inconsistent with p_reset"
        )
    p_other = 1.0 - (1.0 - p_dark) / (1.0 - p_res) if p_res < 1.0 else 0.0
    p_other = min(max(p_other, 0.0), 1.0)
    return _Plan(
        key=int(cfg.seed) + (int(sub) << 64),
        p_sig=p_sig,
        p_res=p_res,
        p_other=p_other,
        p_g1=cfg.p_g1,
        eta_ro=eff.eta_ro,
        cycle_mode=cycle_mode,
        t_cycle_ps=round(cd.t_cycle / PS),
        extra_ps=round((t.t_m + cfg.t_pi) / PS),
    )


def _uniforms(key: int, start: int, n: int, stream: int) -> np.ndarray:
    """(n, 4) uniforms in [0, 1); row i comes from counter block start + i."""
    bg = np.random.Philox(key=key, counter=[start, stream, 0, 0])
    raw = bg.random_raw(4 * n).reshape(n, 4)
    return (raw >> np.uint64(11)).astype(np.float64) * _U53


def _chunk(plan: _Plan, start: int, stop: int):
    """Simulate cycles [start, stop): click mask, reset attempts, residual mask."""
    n = stop - start
    u = _uniforms(plan.key, start, n, 0)
    residual = u[:, 2] < plan.p_res
    excited = (u[:, 0] < plan.p_sig) | residual | (u[:, 1] < plan.p_other)
    if plan.p_g1 > 0:
        v = _uniforms(plan.key, start, n, 1)
        misread = v[:, 0] < plan.p_g1
    else:
        v = None
        misread = np.zeros(n, dtype=bool)
    if plan.cycle_mode:
        click = np.where(excited, u[:, 3] < plan.eta_ro, misread)
    else:
        click = excited | misread
    attempts = np.ones(n, dtype=np.int64)
    if v is not None:
        # geometric number of failed reset attempts, failure probability p_g1
        fails = np.floor(np.log1p(-v[:, 1]) / math.log(plan.p_g1))
        attempts += np.minimum(fails, 2**31).astype(np.int64)
    attempts[~click] = 0
    return click, attempts, residual


def _chunks(n_cycles: int, chunk: int):
    return [(s, min(s + chunk, n_cycles)) for s in range(0, n_cycles, chunk)]


def _map(fn, items, workers: int):
    if workers == 1 or len(items) == 1:
        return [fn(*it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda it: fn(*it), items))


def _params_hash(cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> bytes:
    doc = {
        "n_cycles": int(cfg.n_cycles),
        "seed": int(cfg.seed),
        "efficiency": asdict(cfg.efficiency),
        "dark_rate": cfg.dark_rate,
        "input_rate": cfg.input_rate,
        "p_g1": cfg.p_g1,
        "t_pi": cfg.t_pi,
        "readout": cfg.readout,
        "device": asdict(d),
        "timing": asdict(t),
    }
    text = json.dumps(doc, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode("utf-8")).digest()


@dataclass(eq=False)
class ClickRecord:
    """Outcome of one run.

    ``packed`` holds one bit per cycle (little bit order). ``cycle_ps`` are
    cycle start times in integer picoseconds and ``end_ps`` is the end of the
    last cycle. ``reset_attempts`` has one entry per click. Equality compares
    data and provenance, not the chunk layout used to produce it.
    """

    packed: np.ndarray
    n_cycles: int
    cycle_ps: np.ndarray
    end_ps: int
    reset_attempts: np.ndarray
    seed: int
    chunk_size: int
    t_cycle_ps: int
    extra_ps: int
    params_hash: bytes

    def __post_init__(self) -> None:
        if self.packed.size != (self.n_cycles + 7) // 8:
            raise ValueError("packed click array length does not match n_cycles")
        if self.cycle_ps.size != self.n_cycles:
            raise ValueError("cycle_ps length does not match n_cycles")
        if self.reset_attempts.size != self.n_clicks:
            raise ValueError("one reset attempt count is needed per click")
        if np.any(self.reset_attempts < 1):
            raise ValueError("reset_attempts must be at least 1 for every click")

    @property
    def clicks(self) -> np.ndarray:
        return np.unpackbits(self.packed, count=self.n_cycles, bitorder="little").astype(bool)

    @property
    def n_clicks(self) -> int:
        return int(np.unpackbits(self.packed, count=self.n_cycles, bitorder="little").sum())

    @property
    def cycle_times(self) -> np.ndarray:
        return self.cycle_ps * PS

    @property
    def duration(self) -> float:
        return self.end_ps * PS

    @property
    def rate(self) -> float:
        return self.n_clicks / self.duration

    @property
    def stderr(self) -> float:
        return _rate_stderr(self.n_clicks, self.n_cycles, self.duration)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ClickRecord):
            return NotImplemented
        return (
            self.n_cycles == other.n_cycles
            and self.seed == other.seed
            and self.end_ps == other.end_ps
            and self.t_cycle_ps == other.t_cycle_ps
            and self.extra_ps == other.extra_ps
            and self.params_hash == other.params_hash
            and np.array_equal(self.packed, other.packed)
            and np.array_equal(self.cycle_ps, other.cycle_ps)
            and np.array_equal(self.reset_attempts, other.reset_attempts)
        )

    def summary(self) -> dict[str, object]:
        attempts = self.reset_attempts
        return {
            "seed": self.seed,
            "n_cycles": self.n_cycles,
            "chunk_size": self.chunk_size,
            "n_clicks": self.n_clicks,
            "duration_s": self.duration,
            "rate_per_s": self.rate,
            "rate_stderr_per_s": self.stderr,
            "mean_reset_attempts": float(attempts.mean()) if attempts.size else 1.0,
            "max_reset_attempts": int(attempts.max()) if attempts.size else 0,
            "params_sha256": self.params_hash.hex(),
        }


def _rate_stderr(n_clicks: int, n_cycles: int, duration: float) -> float:
    # binomial spread of the click count, floored at one count
    var = n_clicks * (1.0 - n_clicks / n_cycles)
    return math.sqrt(max(var, 1.0)) / duration


def simulate_run(cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> ClickRecord:
    plan = _plan(cfg, d, t)
    parts = _map(lambda a, b: _chunk(plan, a, b), _chunks(cfg.n_cycles, cfg.chunk_size), cfg.workers)
    click = np.concatenate([p[0] for p in parts])
    attempts = np.concatenate([p[1] for p in parts])
    durations = plan.t_cycle_ps + np.maximum(attempts - 1, 0) * plan.extra_ps
    ends = np.cumsum(durations)
    starts = ends - durations
    return ClickRecord(
        packed=np.packbits(click, bitorder="little"),
        n_cycles=int(cfg.n_cycles),
        cycle_ps=starts,
        end_ps=int(ends[-1]),
        reset_attempts=attempts[click].astype(np.uint32),
        seed=int(cfg.seed),
        chunk_size=int(cfg.chunk_size),
        t_cycle_ps=plan.t_cycle_ps,
        extra_ps=plan.extra_ps,
        params_hash=_params_hash(cfg, d, t),
    )


@dataclass(frozen=True)
class _Tally:
    n_cycles: int
    n_clicks: int
    extra_attempts: int
    n_residual: int
    total_ps: int
    bin_clicks: np.ndarray | None = None
    bin_ps: np.ndarray | None = None


def _tally(cfg: SimConfig, d: DeviceParams, t: CycleTiming, sub: int = 0, bin_cycles: int | None = None) -> _Tally:
    """Stream a run and keep only integer reductions (optionally per bin)."""
    plan = _plan(cfg, d, t, sub)
    n = int(cfg.n_cycles)
    n_bins = n // bin_cycles if bin_cycles else 0

    def work(a, b):
        click, attempts, residual = _chunk(plan, a, b)
        extra = np.maximum(attempts - 1, 0)
        out = [int(click.sum()), int(extra.sum()), int(residual.sum())]
        if bin_cycles:
            idx = np.arange(a, b) // bin_cycles
            keep = idx < n_bins
            lo = a // bin_cycles
            width = max(min((b - 1) // bin_cycles, n_bins - 1) - lo + 1, 0)
            local = idx[keep] - lo
            out.append((lo, np.bincount(local, weights=click[keep], minlength=width).astype(np.int64),
                        np.bincount(local, weights=extra[keep], minlength=width).astype(np.int64)))
        return out

    parts = _map(work, _chunks(n, cfg.chunk_size), cfg.workers)
    n_clicks = sum(p[0] for p in parts)
    extra = sum(p[1] for p in parts)
    n_res = sum(p[2] for p in parts)
    total_ps = n * plan.t_cycle_ps + extra * plan.extra_ps
    if not bin_cycles:
        return _Tally(n, n_clicks, extra, n_res, total_ps)
    bin_clicks = np.zeros(n_bins, dtype=np.int64)
    bin_extra = np.zeros(n_bins, dtype=np.int64)
    for p in parts:
        lo, c, e = p[3]
        bin_clicks[lo : lo + c.size] += c
        bin_extra[lo : lo + e.size] += e
    bin_ps = bin_cycles * plan.t_cycle_ps + bin_extra * plan.extra_ps
    return _Tally(n, n_clicks, extra, n_res, total_ps, bin_clicks, bin_ps)


def click_probability(cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> float:
    """Closed-form click probability per cycle."""
    plan = _plan(cfg, d, t)
    quiet = (1.0 - plan.p_sig) * (1.0 - plan.p_res) * (1.0 - plan.p_other)
    if plan.cycle_mode:
        return plan.eta_ro * (1.0 - quiet) + plan.p_g1 * quiet
    return 1.0 - quiet * (1.0 - plan.p_g1)


def expected_rate(cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> float:
    """Closed-form long-run click rate (clicks per mean cycle duration)."""
    plan = _plan(cfg, d, t)
    p = click_probability(cfg, d, t)
    extra_attempts = plan.p_g1 / (1.0 - plan.p_g1)
    mean_ps = plan.t_cycle_ps + p * extra_attempts * plan.extra_ps
    return p / (mean_ps * PS)


@dataclass(frozen=True)
class RateCurvePoint:
    input_rate: float
    detected_rate: float
    stderr: float
    n_cycles: int = 0
    duration: float = math.nan


def rate_curve(rates, cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> list[RateCurvePoint]:
    """Detected rate for each incoming photon rate; each point uses its own stream."""
    rates = np.asarray(rates, dtype=float)
    if rates.ndim != 1 or rates.size == 0:
        raise ValueError("rates must be a non-empty 1-d array")
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite and non-negative")
    if np.any(np.diff(rates) < 0):
        raise ValueError("rates must be ascending")
    return [measure_rate(cfg.with_rate(r), d, t, stream=i + 1) for i, r in enumerate(rates)]


def measure_rate(cfg: SimConfig, d: DeviceParams, t: CycleTiming, stream: int = 0) -> RateCurvePoint:
    """Streamed click rate of one run; ``stream`` selects an independent key."""
    tally = _tally(cfg, d, t, sub=stream)
    duration = tally.total_ps * PS
    return RateCurvePoint(
        cfg.input_rate,
        tally.n_clicks / duration,
        _rate_stderr(tally.n_clicks, tally.n_cycles, duration),
        tally.n_cycles,
        duration,
    )


def fit_rate_curve(points, max_rate: float = 2000.0, iterations: int = 4) -> LinearModel:
    """Weighted straight-line fit of detected vs incoming rate below ``max_rate``."""
    sel = [p for p in points if p.input_rate <= max_rate]
    if len(sel) < 2:
        raise ValueError("need at least two rate points below max_rate")
    return fit_count_line([p.input_rate for p in sel], sel, iterations)


def fit_count_line(x, points, iterations: int = 4) -> LinearModel:
    """Line through Monte-Carlo rates ``points`` measured at abscissae ``x``.

    Weights use the binomial variance of the *fitted* click count, refined
    over a few passes. Weighting by the observed counts instead favours points
    that fluctuated low and biases the slope downwards when counts are small.
    Points without run lengths fall back to their reported standard errors.
    """
    x = np.asarray(x, dtype=float)
    y = np.array([p.detected_rate for p in points])
    n = np.array([p.n_cycles for p in points], dtype=float)
    dur = np.array([p.duration for p in points])
    if np.any(n <= 0) or not np.all(np.isfinite(dur)):
        return fit_linear(x, y, np.array([1.0 / p.stderr**2 for p in points]))
    t_cycle = dur / n
    fit = fit_linear(x, y)
    for _ in range(iterations):
        # per-cycle click probability, kept at least one count away from 0 and n
        p = np.clip(fit.predict(x) * t_cycle, 1.0 / n, 1.0 - 1.0 / n)
        fit = fit_linear(x, y, dur**2 / (n * p * (1.0 - p)))
    return fit


@dataclass(frozen=True)
class DarkSeries:
    start_times: np.ndarray
    durations: np.ndarray
    counts: np.ndarray

    @property
    def rates(self) -> np.ndarray:
        return self.counts / self.durations

    @property
    def mean_rate(self) -> float:
        return float(self.counts.sum() / self.durations.sum())


def dark_series(wall_time: float, bin: int, cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> DarkSeries:
    """Click counts in consecutive bins of ``bin`` cycles covering ``wall_time`` seconds.

    The input rate of ``cfg`` is used as is; ``cfg.n_cycles`` is ignored.
    A trailing partial bin is dropped.
    """
    if int(bin) != bin or bin <= 0:
        raise ValueError("bin must be a positive integer number of cycles")
    if not wall_time > 0:
        raise ValueError("wall_time must be positive")
    t_cycle = derive_cycle(t).t_cycle
    n_bins = int(wall_time // (bin * t_cycle))
    if n_bins < 1:
        raise ValueError("wall_time is shorter than one bin")
    tally = _tally(replace(cfg, n_cycles=n_bins * int(bin)), d, t, bin_cycles=int(bin))
    ends = np.cumsum(tally.bin_ps)
    return DarkSeries(start_times=(ends - tally.bin_ps) * PS, durations=tally.bin_ps * PS, counts=tally.bin_clicks)


@dataclass(frozen=True)
class ResetStatistics:
    mean_attempts: float
    mean_t_r: float
    residual_probability: float
    n_resets: int


def reset_statistics(cfg: SimConfig, d: DeviceParams, t: CycleTiming) -> ResetStatistics:
    """Reset-loop statistics of a streamed run.

    ``mean_t_r`` is the average reset time per cycle: the configured average
    plus the time spent on repeated attempts.
    """
    plan = _plan(cfg, d, t)
    tally = _tally(cfg, d, t)
    mean_attempts = 1.0 + tally.extra_attempts / tally.n_clicks if tally.n_clicks else 1.0
    mean_t_r = t.t_r_avg + tally.extra_attempts * plan.extra_ps * PS / tally.n_cycles
    return ResetStatistics(mean_attempts, mean_t_r, tally.n_residual / tally.n_cycles, tally.n_clicks)


def click_record_bytes(rec: ClickRecord) -> bytes:
    """Binary encoding of a record.

    Layout (little endian): 8-byte magic ``SMPDCLK1``, u32 format version,
    u32 reserved, u64 seed, u64 n_cycles, u64 chunk_size, u64 n_clicks,
    u64 cycle length (ps), u64 extra time per repeated reset attempt (ps),
    32-byte SHA-256 of the parameters; then the bit-packed clicks
    (``ceil(n_cycles / 8)`` bytes, cycle 0 in the lowest bit); then one u32
    reset attempt count per click.
    """
    header = _HEADER.pack(
        _MAGIC, _FORMAT_VERSION, 0, rec.seed, rec.n_cycles, rec.chunk_size, rec.n_clicks,
        rec.t_cycle_ps, rec.extra_ps, rec.params_hash,
    )
    return header + rec.packed.astype(np.uint8).tobytes() + rec.reset_attempts.astype("<u4").tobytes()


def write_click_record(rec: ClickRecord, path: str | Path, summary: bool = True) -> Path:
    """Write :func:`click_record_bytes` to ``path``, plus a ``.txt`` key/value summary."""
    path = Path(path)
    path.write_bytes(click_record_bytes(rec))
    if summary:
        write_summary(path.with_suffix(".txt"), rec.summary())
    return path


def read_click_record(path: str | Path) -> ClickRecord:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise ValueError("file too short for a click record header")
    magic, version, _, seed, n_cycles, chunk, n_clicks, t_cycle_ps, extra_ps, digest = _HEADER.unpack_from(blob)
    if magic != _MAGIC:
        raise ValueError("not a click record (bad magic)")
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported click record version {version}")
    n_packed = (n_cycles + 7) // 8
    expected = _HEADER.size + n_packed + 4 * n_clicks
    if len(blob) != expected:
        raise ValueError(f"click record size {len(blob)} does not match header ({expected})")
    packed = np.frombuffer(blob, dtype=np.uint8, count=n_packed, offset=_HEADER.size).copy()
    attempts = np.frombuffer(blob, dtype="<u4", count=n_clicks, offset=_HEADER.size + n_packed).astype(np.uint32)
    click = np.unpackbits(packed, count=n_cycles, bitorder="little").astype(bool)
    full = np.zeros(n_cycles, dtype=np.int64)
    full[click] = attempts
    durations = t_cycle_ps + np.maximum(full - 1, 0) * extra_ps
    ends = np.cumsum(durations)
    return ClickRecord(
        packed=packed, n_cycles=n_cycles, cycle_ps=ends - durations, end_ps=int(ends[-1]),
        reset_attempts=attempts, seed=seed, chunk_size=chunk, t_cycle_ps=t_cycle_ps,
        extra_ps=extra_ps, params_hash=digest,
    )
