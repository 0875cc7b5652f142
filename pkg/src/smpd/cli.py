"""Command-line front end.

Every computing subcommand writes ``<command>.csv`` and
``<command>.summary.txt`` into ``--out`` plus a ``<command>.manifest.json``
that lists them. Only the manifest carries timestamps, so repeated runs with
the same arguments and configuration produce byte-identical datasets.

Exit status: 0 on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (
    dark_budget,
    detector_bandwidth,
    efficiency_budget,
    external_cooperativity,
    nep,
    operating_budget,
    sensitivity,
    thermal_occupancy,
)
from .constants import TWO_PI
from .device import DeviceConfig, Environment, derive_cycle, dump_device_config, resolve_config
from .dynamics import PulseEnvelope, SolverConfig, integrate_pulse
from .exceptions import ConfigError, NumericalError
from .io import csv_text, summary_text
from .stochastic import SimConfig, click_record_bytes, fit_rate_curve, rate_curve, simulate_run
from .sweeps import (
    BROADENING_FWHM,
    Baseline,
    Scenario,
    optimal_detection_time,
    project_budget,
    sweep_input_frequency,
    sweep_pump_amplitude,
    sweep_temperature,
    window_product,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3


def parse_range(text: str) -> np.ndarray:
    """``start:stop:step`` with ``stop`` included when it lies on the grid."""
    parts = text.split(":")
    if len(parts) == 1:
        return np.array([float(parts[0])])
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected start:stop:step, got {text!r}")
    try:
        start, stop, step = (float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"non-numeric range {text!r}") from exc
    if not step > 0 or stop < start:
        raise argparse.ArgumentTypeError(f"range {text!r} needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(n)


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


@dataclass
class Outcome:
    header: list[str]
    columns: list
    summary: dict
    line: str
    binary: dict[str, bytes] = field(default_factory=dict)


# ---------------------------------------------------------------- helpers


def _eta_kd(cfg: DeviceConfig) -> tuple[float, float]:
    """Efficiency and bandwidth to use for thermal counts: measured if known, else modelled."""
    d = cfg.device
    m = cfg.measured
    kd = m.kappa_d if m.kappa_d is not None else detector_bandwidth(d.kappa_b, d.kappa_w)
    if m.eta is not None:
        return m.eta, kd
    return efficiency_budget(d, cfg.timing, external_cooperativity(cfg.pump, d)).eta_total, kd


def _sim_inputs(cfg: DeviceConfig, theory: bool):
    d, t = cfg.device, cfg.timing
    budget = efficiency_budget(d, t, external_cooperativity(cfg.pump, d))
    if cfg.measured.eta is not None and not theory:
        budget = operating_budget(budget, cfg.measured.eta)
    if cfg.measured.alpha is not None and not theory:
        dark = cfg.measured.alpha
    else:
        eta, kd = _eta_kd(cfg)
        dark = dark_budget(d, derive_cycle(t), cfg.environment, kd, eta).alpha_total
    return budget, dark


def _alpha_eta(cfg: DeviceConfig, args) -> tuple[float, float]:
    alpha = args.alpha if args.alpha is not None else cfg.measured.alpha
    eta = args.eta if args.eta is not None else cfg.measured.eta
    if alpha is None or eta is None:
        budget = efficiency_budget(cfg.device, cfg.timing, external_cooperativity(cfg.pump, cfg.device))
        e, kd = _eta_kd(cfg)
        if eta is None:
            eta = budget.eta_total
        if alpha is None:
            alpha = dark_budget(cfg.device, derive_cycle(cfg.timing), cfg.environment, kd, e).alpha_total
    return float(alpha), float(eta)


# ---------------------------------------------------------------- subcommands


def cmd_budget(cfg: DeviceConfig, args) -> Outcome:
    d, t = cfg.device, cfg.timing
    b = efficiency_budget(d, t, external_cooperativity(cfg.pump, d))
    eta, kd = _eta_kd(cfg)
    dk = dark_budget(d, derive_cycle(t), cfg.environment, kd, eta)
    values = {
        "eta_4wm": b.eta_4wm, "eta_ro": b.eta_ro, "eta_d": b.eta_d, "eta_qubit": b.eta_qubit,
        "eta_total": b.eta_total,
        "alpha_qubit": dk.alpha_qubit, "alpha_4wm": dk.alpha_4wm, "alpha_th": dk.alpha_th,
        "alpha_total": dk.alpha_total,
    }
    return Outcome(list(values), [[v] for v in values.values()], values,
                   f"eta_total={b.eta_total:.4f} alpha_total={dk.alpha_total:.2f}/s")


def cmd_darkcount(cfg: DeviceConfig, args) -> Outcome:
    d, t = cfg.device, cfg.timing
    env = cfg.environment if args.temperature_mk is None else Environment(args.temperature_mk * 1e-3)
    eta, kd = _eta_kd(cfg)
    dk = dark_budget(d, derive_cycle(t), env, kd, eta)
    nbar = 0.0 if env.temperature is None else thermal_occupancy(env.temperature, d.omega_b)
    values = {
        "temperature_k": env.temperature if env.temperature is not None else float("nan"),
        "nbar": nbar,
        "alpha_qubit": dk.alpha_qubit, "alpha_4wm": dk.alpha_4wm, "alpha_th": dk.alpha_th,
        "alpha_total": dk.alpha_total,
    }
    return Outcome(list(values), [[v] for v in values.values()], values, f"alpha_total={dk.alpha_total:.2f}/s")


def cmd_nep(cfg: DeviceConfig, args) -> Outcome:
    alpha, eta = _alpha_eta(cfg, args)
    omega = cfg.device.omega_b
    times = args.t
    values = np.asarray(nep(times, alpha, eta, omega), dtype=float).reshape(-1)
    s = sensitivity(alpha, eta, omega)
    summary = {"alpha_per_s": alpha, "eta": eta, "omega_rad_s": omega, "sensitivity_w_rthz": s}
    summary.update({f"nep_w_t{i}": v for i, v in enumerate(values)})
    line = f"nep(t={times[0]:g} s)={values[0]:.3e} W/rtHz sensitivity={s:.3e} W/rtHz"
    return Outcome(["t_s", "nep_w_rthz"], [times, values], summary, line)


def cmd_bandwidth(cfg: DeviceConfig, args) -> Outcome:
    d = cfg.device
    kd = detector_bandwidth(d.kappa_b, d.kappa_w)
    deltas = np.linspace(-5.0, 5.0, 801) * d.kappa_w
    res = sweep_input_frequency(deltas, d, cfg.pump, cfg.timing)
    summary = {
        "kappa_b_hz": d.kappa_b / TWO_PI, "kappa_w_hz": d.kappa_w / TWO_PI,
        "kappa_d_theory_hz": kd / TWO_PI, "fwhm_numeric_hz": res.fit["fwhm"] / TWO_PI,
        "fwhm_lorentzian_hz": res.fit["lorentzian_fwhm"] / TWO_PI,
    }
    return Outcome(list(summary), [[v] for v in summary.values()], summary,
                   f"kappa_d/2pi={kd / TWO_PI / 1e6:.4f} MHz (numeric FWHM {res.fit['fwhm'] / TWO_PI / 1e6:.4f} MHz)")


def _sweep_outcome(res, line: str) -> Outcome:
    names, cols = res.table()
    summary = dict(res.fit)
    summary["fit_residual_norm"] = res.residual_norm
    return Outcome(names, cols, summary, line)


def cmd_pump_sweep(cfg: DeviceConfig, args) -> Outcome:
    res = sweep_pump_amplitude(args.xis, cfg.device, cfg.timing)
    return _sweep_outcome(res, f"peak eta_4wm={res.fit['peak']:.4f} at C_ext={res.fit['c_at_peak']:.4f} (optimum {res.fit['c_optimal']:.4f})")


def cmd_freq_sweep(cfg: DeviceConfig, args) -> Outcome:
    deltas = args.deltas_mhz * 1e6 * TWO_PI
    broad = args.broadening_khz * 1e3 * TWO_PI if args.broadening_khz else None
    peak = None if args.raw else cfg.measured.eta
    res = sweep_input_frequency(deltas, cfg.device, cfg.pump, cfg.timing, broadening=broad, peak_efficiency=peak)
    out = _sweep_outcome(res, f"FWHM/2pi={res.fit['fwhm'] / TWO_PI / 1e6:.4f} MHz peak={res.fit['peak']:.4f}")
    return out


def cmd_temp_sweep(cfg: DeviceConfig, args) -> Outcome:
    eta, kd = _eta_kd(cfg)
    res = sweep_temperature(args.temps_mk * 1e-3, cfg.device, derive_cycle(cfg.timing), kd, eta,
                            mc_cycles=args.mc_cycles, seed=args.seed, workers=args.workers)
    return _sweep_outcome(res, f"slope={res.fit['slope']:.6e}/s (theory {res.fit['slope_theory']:.6e}/s)")


def cmd_rate_curve(cfg: DeviceConfig, args) -> Outcome:
    budget, dark = _sim_inputs(cfg, args.theory)
    sim = SimConfig(args.cycles, args.seed, budget, dark, chunk_size=args.chunk_size, workers=args.workers)
    points = rate_curve(args.rates, sim, cfg.device, cfg.timing)
    cols = [[p.input_rate for p in points], [p.detected_rate for p in points], [p.stderr for p in points]]
    summary = {"eta_total": budget.eta_total, "alpha_per_s": dark, "n_cycles": args.cycles,
               "saturation_per_s": 1.0 / derive_cycle(cfg.timing).t_cycle}
    line = f"{len(points)} rate points"
    low = [p for p in points if p.input_rate <= args.fit_max]
    if len(low) >= 2:
        fit = fit_rate_curve(points, args.fit_max)
        summary.update({"fit_slope": fit.slope, "fit_slope_stderr": fit.slope_stderr,
                        "fit_intercept_per_s": fit.intercept, "fit_residual_norm": fit.residual_norm})
        line = f"slope={fit.slope:.4f}+-{fit.slope_stderr:.4f} intercept={fit.intercept:.1f}/s"
    return Outcome(["input_rate_per_s", "detected_rate_per_s", "stderr_per_s"], cols, summary, line)


def cmd_trace(cfg: DeviceConfig, args) -> Outcome:
    budget, dark = _sim_inputs(cfg, args.theory)
    sim = SimConfig(args.cycles, args.seed, budget, dark, input_rate=args.rate,
                    chunk_size=args.chunk_size, workers=args.workers)
    rec = simulate_run(sim, cfg.device, cfg.timing)
    idx = np.nonzero(rec.clicks)[0]
    cols = [idx, rec.cycle_times[idx], rec.reset_attempts]
    return Outcome(["cycle", "time_s", "reset_attempts"], cols, rec.summary(),
                   f"{rec.n_clicks} clicks in {rec.duration:.3f} s ({rec.rate:.2f}/s)", {"bin": click_record_bytes(rec)})


def cmd_dynamics(cfg: DeviceConfig, args) -> Outcome:
    from .dynamics import pump_for_cooperativity

    d = cfg.device
    pump = pump_for_cooperativity(d, args.cooperativity) if args.cooperativity is not None else cfg.pump
    env = PulseEnvelope(args.shape, args.duration_us * 1e-6, delta=args.delta_mhz * 1e6 * TWO_PI)
    traj = integrate_pulse(env, d, pump, SolverConfig(), record_every=args.record_every)
    summary = {"transfer_ratio": traj.transfer_ratio, "energy_residual": traj.energy_residual(),
               "photons_in": traj.photons_in[-1], "n_samples": len(traj.times)}
    cols = [traj.times, traj.nu.real, traj.nu.imag, traj.beta.real, traj.beta.imag, traj.transferred]
    return Outcome(["t_s", "re_nu", "im_nu", "re_beta", "im_beta", "transferred"], cols, summary,
                   f"transfer ratio={traj.transfer_ratio:.5f}")


def cmd_optimize_td(cfg: DeviceConfig, args) -> Outcome:
    d, t = cfg.device, cfg.timing
    opt = optimal_detection_time(d, t)
    grid = np.linspace(0.0, 5.0 * max(opt.numeric, opt.closed_form), 501)[1:]
    summary = {"overhead_s": t.overhead, "t1_s": d.t1, **asdict(opt)}
    return Outcome(["t_d_s", "product"], [grid, window_product(grid, t.overhead, d.t1)], summary,
                   f"t_d closed form={opt.closed_form * 1e6:.3f} us numeric={opt.numeric * 1e6:.3f} us")


def cmd_project(cfg: DeviceConfig, args) -> Outcome:
    base = Baseline.from_config(cfg)
    overrides = {"t1": cfg.device.t1 * args.t1_scale} if args.t1_scale != 1.0 else {}
    sc = Scenario("cli", overrides, ideal_limit=args.ideal, nbar_scale=args.nbar_scale)
    eta, dk = project_budget(sc, base)
    s = sensitivity(dk.alpha_total, eta, base.omega)
    values = {"eta": eta, "alpha_qubit": dk.alpha_qubit, "alpha_4wm": dk.alpha_4wm, "alpha_th": dk.alpha_th,
              "alpha_total": dk.alpha_total, "sensitivity_w_rthz": s,
              "baseline_sensitivity_w_rthz": sensitivity(base.alpha, base.eta, base.omega)}
    return Outcome(list(values), [[v] for v in values.values()], values, f"sensitivity={s:.3e} W/rtHz")


COMMANDS = {
    "budget": cmd_budget,
    "darkcount": cmd_darkcount,
    "nep": cmd_nep,
    "bandwidth": cmd_bandwidth,
    "pump-sweep": cmd_pump_sweep,
    "freq-sweep": cmd_freq_sweep,
    "temp-sweep": cmd_temp_sweep,
    "rate-curve": cmd_rate_curve,
    "trace": cmd_trace,
    "dynamics": cmd_dynamics,
    "optimize-td": cmd_optimize_td,
    "project": cmd_project,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="smpd1", help="fixture name (smpd1, smpd2) or path to a TOML file")
    common.add_argument("--seed", type=_u64, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--format", choices=["csv"], default="csv")
    common.add_argument("--dry-run", action="store_true", help="validate and print the resolved parameters only")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--cycles", type=int, default=10**6)
    sim.add_argument("--chunk-size", type=int, default=1 << 16)
    sim.add_argument("--workers", type=int, default=1)
    sim.add_argument("--theory", action="store_true", help="use modelled efficiency and dark rate instead of measured ones")

    parser = argparse.ArgumentParser(prog="smpd", description="Microwave photon counter models and simulations.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    sub.add_parser("budget", parents=[common], help="efficiency and dark-count budgets")
    p = sub.add_parser("darkcount", parents=[common], help="dark-count budget at a line temperature")
    p.add_argument("--temperature-mk", type=float, default=None)
    p = sub.add_parser("nep", parents=[common], help="noise equivalent power")
    p.add_argument("--t", type=parse_range, default=np.array([1.0]), help="integration time(s) in s")
    p.add_argument("--alpha", type=float, default=None, help="dark rate 1/s (default: measured)")
    p.add_argument("--eta", type=float, default=None, help="efficiency (default: measured)")
    sub.add_parser("bandwidth", parents=[common], help="detector bandwidth, closed form and numeric")
    p = sub.add_parser("pump-sweep", parents=[common], help="conversion efficiency vs pump amplitude")
    p.add_argument("--xis", type=parse_range, default=parse_range("0:0.08:0.0001"))
    p = sub.add_parser("freq-sweep", parents=[common], help="efficiency vs input detuning")
    p.add_argument("--deltas-mhz", type=parse_range, default=parse_range("-5:5:0.0125"))
    p.add_argument("--broadening-khz", type=float, default=0.0, help=f"Lorentzian broadening FWHM (e.g. {BROADENING_FWHM / TWO_PI / 1e3:g})")
    p.add_argument("--raw", action="store_true", help="do not normalise the peak to the measured efficiency")
    p = sub.add_parser("temp-sweep", parents=[common], help="thermal dark rate vs temperature")
    p.add_argument("--temps-mk", type=parse_range, default=parse_range("40:100:5"))
    p.add_argument("--mc-cycles", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p = sub.add_parser("rate-curve", parents=[common, sim], help="Monte-Carlo detected vs incoming rate")
    p.add_argument("--rates", type=parse_range, default=parse_range("0:12000:500"))
    p.add_argument("--fit-max", type=float, default=2000.0)
    p = sub.add_parser("trace", parents=[common, sim], help="Monte-Carlo click trace")
    p.add_argument("--rate", type=float, default=0.0, help="incoming photon rate 1/s")
    p = sub.add_parser("dynamics", parents=[common], help="integrate one input wave packet")
    p.add_argument("--shape", choices=["rectangular", "gaussian"], default="rectangular")
    p.add_argument("--duration-us", type=float, default=20.0)
    p.add_argument("--delta-mhz", type=float, default=0.0)
    p.add_argument("--cooperativity", type=float, default=None)
    p.add_argument("--record-every", type=int, default=50)
    sub.add_parser("optimize-td", parents=[common], help="optimal detection window")
    p = sub.add_parser("project", parents=[common], help="projected sensitivity for a modified device")
    p.add_argument("--t1-scale", type=float, default=1.0)
    p.add_argument("--ideal", action="store_true", help="efficiency limited by conversion only")
    p.add_argument("--nbar-scale", type=float, default=1.0)
    return parser


def _options(args) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if isinstance(value, np.ndarray):
            value = [float(v) for v in value]
        out[key] = value
    return out


def run_command(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    started = time.perf_counter()
    stamp = datetime.now(timezone.utc).isoformat()
    try:
        cfg, text = resolve_config(args.config)
        if args.dry_run:
            print(dump_device_config(cfg), end="")
            print(json.dumps({"command": args.command, "options": _options(args)}, indent=2, default=str))
            return EXIT_OK
        outcome = COMMANDS[args.command](cfg, args)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = args.command
        outputs = []
        csv_path = out_dir / f"{stem}.csv"
        csv_path.write_text(csv_text(outcome.header, outcome.columns), encoding="utf-8")
        outputs.append(csv_path)
        summary_path = out_dir / f"{stem}.summary.txt"
        summary_path.write_text(summary_text({"command": stem, "config": cfg.name, **outcome.summary}), encoding="utf-8")
        outputs.append(summary_path)
        for ext, blob in outcome.binary.items():
            path = out_dir / f"{stem}.{ext}"
            path.write_bytes(blob)
            outputs.append(path)
        manifest = {
            "command": stem,
            "argv": list(sys.argv[1:] if argv is None else argv),
            "config": {"ref": str(args.config), "name": cfg.name, "sha256": hashlib.sha256(text.encode("utf-8")).hexdigest()},
            "seed": args.seed,
            "outputs": [str(p) for p in outputs],
            "version": __version__,
            "started_utc": stamp,
            "wall_clock_s": time.perf_counter() - started,
        }
        (out_dir / f"{stem}.manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    except NumericalError as exc:
        print(f"smpd: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, ValueError) as exc:
        print(f"smpd: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"{args.command}: {outcome.line}")
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())
