"""Detector parameter records and configuration ingestion.

Every frequency and rate is stored internally as an angular quantity (rad/s),
every duration in seconds and every temperature in kelvin. Configuration
documents are TOML; each dimensional key carries a unit suffix, e.g.
``chi_b_hz = 5.2e6`` or ``t1_us = 37``. Values given in ordinary frequency
units (``_hz``, ``_khz``, ``_mhz``, ``_ghz``) are multiplied by 2*pi once, here.
``_rad_s`` keys are taken verbatim, which is what :func:`dump_device_config`
emits so that a dump/load round trip is bit-exact.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import tomli_w

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .constants import TWO_PI
from .exceptions import ConfigError

__all__ = [
    "DeviceParams",
    "CycleTiming",
    "CycleDerived",
    "PumpConfig",
    "Environment",
    "MeasuredPoint",
    "DeviceConfig",
    "load_device_config",
    "load_config_file",
    "load_fixture",
    "resolve_config",
    "dump_device_config",
    "derive_cycle",
    "pump_frequency",
    "FIXTURES",
]

FIXTURES = ("smpd1", "smpd2")

# unit suffix -> (multiplier, divisor) into the canonical internal unit, per dimension;
# sub-unit prefixes divide so that e.g. 10 us becomes exactly 1e-05 s
_UNITS: dict[str, dict[str, tuple[float, float]]] = {
    "frequency": {
        "hz": (TWO_PI, 1.0),
        "khz": (TWO_PI * 1e3, 1.0),
        "mhz": (TWO_PI * 1e6, 1.0),
        "ghz": (TWO_PI * 1e9, 1.0),
        "rad_s": (1.0, 1.0),
    },
    "time": {"s": (1.0, 1.0), "ms": (1.0, 1e3), "us": (1.0, 1e6), "ns": (1.0, 1e9)},
    "temperature": {"k": (1.0, 1.0), "mk": (1.0, 1e3)},
    "rate": {"per_s": (1.0, 1.0)},
    "dimensionless": {},
}
_CANONICAL_SUFFIX = {"frequency": "rad_s", "time": "s", "temperature": "k", "rate": "per_s"}


@dataclass(frozen=True)
class DeviceParams:
    """Static parameters of one detector; angular units throughout.

    ``e_c`` and ``t2`` are informational and not consumed by any model.
    """

    omega_q: float
    chi_b: float
    chi_w: float
    omega_b: float
    omega_w: float
    kappa_b_ext: float
    kappa_w_ext: float
    t1: float
    p_eq: float
    eta_ro: float
    kappa_b_int: float = 0.0
    kappa_w_int: float = 0.0
    p_reset: float = 0.0
    alpha_4wm: float = 0.0
    e_c: float | None = None
    t2: float | None = None

    def __post_init__(self) -> None:
        for name in ("omega_q", "chi_b", "chi_w", "omega_b", "omega_w", "kappa_b_ext", "kappa_w_ext", "t1"):
            _require(getattr(self, name) > 0, f"{name} must be positive")
        for name in ("kappa_b_int", "kappa_w_int", "alpha_4wm"):
            _require(getattr(self, name) >= 0, f"{name} must be non-negative")
        for name in ("p_eq", "p_reset", "eta_ro"):
            value = getattr(self, name)
            _require(0.0 <= value <= 1.0, f"{name} must lie in [0, 1], got {value!r}")
        if self.e_c is not None:
            _require(self.e_c > 0, "e_c must be positive")
        if self.t2 is not None:
            _require(self.t2 > 0, "t2 must be positive")
            _require(self.t2 <= 2.0 * self.t1, "t2 must not exceed 2*t1")
        if self.p_reset > self.p_eq:
            warnings.warn(
                f"p_reset ({self.p_reset:g}) exceeds p_eq ({self.p_eq:g}); reset is usually below equilibrium",
                stacklevel=3,
            )

    @property
    def kappa_b(self) -> float:
        """Total buffer decay rate (external + internal)."""
        return self.kappa_b_ext + self.kappa_b_int

    @property
    def kappa_w(self) -> float:
        """Total waste decay rate (external + internal)."""
        return self.kappa_w_ext + self.kappa_w_int


@dataclass(frozen=True)
class CycleTiming:
    """Durations of the detect / measure / reset / wait windows, in seconds."""

    t_d: float
    t_m: float = 0.0
    t_r_avg: float = 0.0
    t_wait: float = 0.0

    def __post_init__(self) -> None:
        _require(self.t_d > 0, "t_d must be positive")
        for name in ("t_m", "t_r_avg", "t_wait"):
            _require(getattr(self, name) >= 0, f"{name} must be non-negative")

    @property
    def overhead(self) -> float:
        """Blind time per cycle (everything but the detection window)."""
        return self.t_m + self.t_r_avg + self.t_wait


@dataclass(frozen=True)
class CycleDerived:
    t_cycle: float
    eta_d: float


@dataclass(frozen=True)
class PumpConfig:
    xi: float
    omega_p: float | None = None

    def __post_init__(self) -> None:
        _require(self.xi >= 0, "xi must be non-negative")
        if self.omega_p is not None:
            _require(self.omega_p > 0, "omega_p must be positive")


@dataclass(frozen=True)
class Environment:
    temperature: float | None = None
    input_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.temperature is not None:
            _require(self.temperature > 0, "temperature must be positive")
        _require(self.input_rate >= 0, "input_rate must be non-negative")


@dataclass(frozen=True)
class MeasuredPoint:
    """Measured operating figures, when known (efficiency, dark rate, bandwidth)."""

    eta: float | None = None
    alpha: float | None = None
    kappa_d: float | None = None

    def __post_init__(self) -> None:
        if self.eta is not None:
            _require(0.0 < self.eta <= 1.0, "eta must lie in (0, 1]")
        if self.alpha is not None:
            _require(self.alpha >= 0, "alpha must be non-negative")
        if self.kappa_d is not None:
            _require(self.kappa_d > 0, "kappa_d must be positive")


@dataclass(frozen=True)
class DeviceConfig:
    name: str
    device: DeviceParams
    timing: CycleTiming
    pump: PumpConfig
    environment: Environment
    measured: MeasuredPoint
    source_hash: str = field(default="", compare=False)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ConfigError(message)


# section -> field -> dimension
_SCHEMA: dict[str, dict[str, str]] = {
    "device": {
        "omega_q": "frequency",
        "e_c": "frequency",
        "chi_b": "frequency",
        "chi_w": "frequency",
        "omega_b": "frequency",
        "omega_w": "frequency",
        "kappa_b_ext": "frequency",
        "kappa_b_int": "frequency",
        "kappa_w_ext": "frequency",
        "kappa_w_int": "frequency",
        "t1": "time",
        "t2": "time",
        "p_eq": "dimensionless",
        "p_reset": "dimensionless",
        "eta_ro": "dimensionless",
        "alpha_4wm": "rate",
    },
    "timing": {"t_d": "time", "t_m": "time", "t_r_avg": "time", "t_wait": "time"},
    "pump": {"xi": "dimensionless", "cooperativity": "dimensionless", "omega_p": "frequency"},
    "environment": {"temperature": "temperature", "input_rate": "rate"},
    "measured": {"eta": "dimensionless", "alpha": "rate", "kappa_d": "frequency"},
}
_REQUIRED_SECTIONS = ("device", "timing")


def _parse_section(section: str, table: Any) -> dict[str, float]:
    if not isinstance(table, Mapping):
        raise ConfigError(f"[{section}] must be a table")
    schema = _SCHEMA[section]
    # longest field names first so that e.g. "kappa_b_ext" wins over a shorter prefix
    names = sorted(schema, key=len, reverse=True)
    out: dict[str, float] = {}
    for key, raw in table.items():
        fname = next((n for n in names if key == n or key.startswith(n + "_")), None)
        if fname is None:
            raise ConfigError(f"unknown key {section}.{key}")
        dimension = schema[fname]
        suffix = key[len(fname) + 1 :] if key != fname else ""
        units = _UNITS[dimension]
        if dimension == "dimensionless":
            if suffix:
                raise ConfigError(f"unit-suffix mismatch: {section}.{key} is dimensionless and takes no suffix")
            scale = (1.0, 1.0)
        elif not suffix:
            raise ConfigError(
                f"unit-suffix mismatch: {section}.{key} needs a {dimension} unit suffix ({', '.join(units)})"
            )
        elif suffix not in units:
            raise ConfigError(
                f"unit-suffix mismatch: {section}.{key}: '_{suffix}' is not a {dimension} unit ({', '.join(units)})"
            )
        else:
            scale = units[suffix]
        if fname in out:
            raise ConfigError(f"{section}.{fname} given more than once")
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number, got {raw!r}")
        value = float(raw)
        if not math.isfinite(value):
            raise ConfigError(f"{section}.{key} must be finite")
        out[fname] = value * scale[0] / scale[1]
    return out


def load_device_config(text: str, name: str | None = None) -> DeviceConfig:
    """Parse and validate a TOML configuration document.

    Raises :class:`ConfigError` on parse failure, unknown keys, unit-suffix
    mismatches or any invariant violation. The error message names the
    offending field.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"parse failure: {exc}") from exc

    top_name = doc.pop("name", None)
    if top_name is not None and not isinstance(top_name, str):
        raise ConfigError("name must be a string")
    for key in doc:
        if key not in _SCHEMA:
            raise ConfigError(f"unknown section [{key}]")
    for section in _REQUIRED_SECTIONS:
        if section not in doc:
            raise ConfigError(f"missing section [{section}]")
    parsed = {section: _parse_section(section, doc.get(section, {})) for section in _SCHEMA}

    dev = parsed["device"]
    required = [f.name for f in fields(DeviceParams) if f.default is MISSING]
    for fname in required:
        if fname not in dev:
            raise ConfigError(f"missing required key device.{fname}")
    device = DeviceParams(**dev)
    if "t_d" not in parsed["timing"]:
        raise ConfigError("missing required key timing.t_d")
    timing = CycleTiming(**parsed["timing"])

    pump_raw = parsed["pump"]
    if "xi" in pump_raw and "cooperativity" in pump_raw:
        raise ConfigError("pump: give either xi or cooperativity, not both")
    if "xi" in pump_raw:
        xi = pump_raw["xi"]
    else:
        coop = pump_raw.get("cooperativity", 1.0)
        _require(coop >= 0, "cooperativity must be non-negative")
        xi = math.sqrt(coop * device.kappa_b * device.kappa_w / (4.0 * device.chi_b * device.chi_w))
    pump = PumpConfig(xi=xi, omega_p=pump_raw.get("omega_p"))

    environment = Environment(**parsed["environment"])
    measured = MeasuredPoint(**parsed["measured"])
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return DeviceConfig(
        name=name or top_name or "unnamed",
        device=device,
        timing=timing,
        pump=pump,
        environment=environment,
        measured=measured,
        source_hash=digest,
    )


def load_config_file(path: str | Path) -> DeviceConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_device_config(text, name=None)


def fixture_text(name: str) -> str:
    if name not in FIXTURES:
        raise ConfigError(f"unknown fixture {name!r}; available: {', '.join(FIXTURES)}")
    return resources.files("smpd.fixtures").joinpath(f"{name}.toml").read_text(encoding="utf-8")


def load_fixture(name: str) -> DeviceConfig:
    return load_device_config(fixture_text(name), name=name)


def resolve_config(ref: str | Path) -> tuple[DeviceConfig, str]:
    """Load a shipped fixture by name or a config file by path; also return the raw text."""
    if isinstance(ref, str) and ref in FIXTURES and not Path(ref).exists():
        text = fixture_text(ref)
        return load_device_config(text, name=ref), text
    path = Path(ref)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return load_device_config(text), text


def dump_device_config(cfg: DeviceConfig) -> str:
    """Serialise in canonical units (rad/s, s, K, 1/s) so that reloading is bit-exact."""
    doc: dict[str, Any] = {"name": cfg.name}
    sections = {
        "device": asdict(cfg.device),
        "timing": asdict(cfg.timing),
        "pump": asdict(cfg.pump),
        "environment": asdict(cfg.environment),
        "measured": asdict(cfg.measured),
    }
    for section, values in sections.items():
        table = {}
        for fname, value in values.items():
            if value is None:
                continue
            dimension = _SCHEMA[section][fname]
            key = fname if dimension == "dimensionless" else f"{fname}_{_CANONICAL_SUFFIX[dimension]}"
            table[key] = float(value)
        doc[section] = table
    return tomli_w.dumps(doc)


def derive_cycle(t: CycleTiming) -> CycleDerived:
    t_cycle = t.t_d + t.t_m + t.t_r_avg + t.t_wait
    return CycleDerived(t_cycle=t_cycle, eta_d=t.t_d / t_cycle)


def pump_frequency(d: DeviceParams) -> float:
    """Pump frequency (rad/s) satisfying the four-wave-mixing resonance condition."""
    omega_p = d.omega_q + d.omega_w - d.chi_w - d.omega_b
    if omega_p <= 0:
        raise ConfigError(f"nonpositive pump frequency ({omega_p:g} rad/s)")
    return omega_p


def with_overrides(d: DeviceParams, **overrides: float) -> DeviceParams:
    """Copy of ``d`` with fields replaced; the copy is re-validated."""
    unknown = set(overrides) - {f.name for f in fields(DeviceParams)}
    if unknown:
        raise ConfigError(f"unknown device field(s): {', '.join(sorted(unknown))}")
    return replace(d, **overrides)
