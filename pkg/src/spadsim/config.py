"""Flat ``key = value`` run configuration with explicit units in key names.

Time-valued keys take one unit suffix out of ``_ps _ns _us _ms _s _min _h``;
each quantity may appear once per source, in any of its units.  Unknown
keys are errors.  Resolved values are stored in canonical units (the
suffix listed in ``PARAMETERS``) so a snapshot round-trips exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from .control import DEFAULT_DRIFT_RATE_PS_PER_MIN, DriftModel, FeedbackPolicy
from .engine import SimConfig
from .model import (
    DEFAULT_DARK_GAMMA,
    DEFAULT_K_AP,
    BiasPoint,
    ConfigError,
    DarkCurve,
    DiodeModel,
    EfficiencyCurve,
    GateConfig,
    TrapModel,
)

TIME_UNITS_PS = {
    "ps": Fraction(1),
    "ns": Fraction(10**3),
    "us": Fraction(10**6),
    "ms": Fraction(10**9),
    "s": Fraction(10**12),
    "min": Fraction(60 * 10**12),
    "h": Fraction(3600 * 10**12),
}


@dataclass(frozen=True)
class Param:
    kind: str  # float, int, bool, str, floats, time
    default: object
    unit: str | None = None  # canonical unit of a time quantity
    integer: bool = False  # time quantity held as whole canonical units


# time quantities are listed by base name; their canonical key is base_unit
PARAMETERS: dict[str, Param] = {
    # device
    "gate_frequency_hz": Param("float", 1.25e9),
    "gate_fwhm": Param("time", 189.0, "ps"),
    "gate_profile": Param("str", "gaussian"),
    "laser_divisor": Param("int", 100),
    "eta_slope": Param("float", 0.20),
    "dark_p0": Param("float", DarkCurve().p0),
    "dark_gamma": Param("float", DEFAULT_DARK_GAMMA),
    "k_ap": Param("float", DEFAULT_K_AP),
    "charge_factor_base": Param("float", 1.0),
    "tau_detrap": Param("time", 1.0e6, "ps"),
    "traps_enabled": Param("bool", True),
    "temperature_label_c": Param("float", -50.0),
    # single run
    "v_ex": Param("float", 0.5),
    "mu": Param("float", 0.1),
    "delay": Param("time", 0.0, "ps"),
    "duration": Param("time", 10**12, "ps", integer=True),
    "logic_deadtime": Param("time", 0, "ps", integer=True),
    "spad_jitter_fwhm": Param("time", 288.0, "ps"),
    "reference_jitter_fwhm": Param("time", 99.0, "ps"),
    "tdc_resolution": Param("time", 50, "ps", integer=True),
    "seed": Param("int", 0),
    # afterpulse
    "main_peak_half_window": Param("time", 400.0, "ps"),
    "tau_fit_window": Param("time", 12.0, "us"),
    # bias sweep
    "sweep_v_ex": Param("floats", (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)),
    "sweep_mu": Param("float", 1.0),
    "sweep_duration": Param("time", 0.1, "s"),
    "sweep_dark_duration": Param("time", 10.0, "s"),
    "sweep_dark_deadtime": Param("time", 10.0, "us"),
    # delay scan
    "scan_start": Param("time", -400.0, "ps"),
    "scan_stop": Param("time", 400.0, "ps"),
    "scan_step": Param("time", 10.0, "ps"),
    "scan_dwell": Param("time", 0.01, "s"),
    "scan_mu": Param("float", 1.0),
    # jitter
    "jitter_mu": Param("float", 1.0),
    "jitter_duration": Param("time", 0.1, "s"),
    # stability
    "stability_duration": Param("time", 3.0, "h"),
    "feedback": Param("bool", False),
    "stability_v_ex": Param("float", 0.55),
    "stability_mu": Param("float", 0.1),
    "drift_rate_ps_per_min": Param("float", DEFAULT_DRIFT_RATE_PS_PER_MIN),
    "efficiency_noise": Param("float", 0.0),
    "feedback_interval": Param("time", 10, "min", integer=True),
    "scan_cost": Param("time", 1, "min", integer=True),
    "coarse_step": Param("time", 25.0, "ps"),
    "fine_step": Param("time", 5.0, "ps"),
}


def canonical_key(base: str) -> str:
    p = PARAMETERS[base]
    return f"{base}_{p.unit}" if p.kind == "time" else base


def split_key(key: str) -> tuple[str, str | None]:
    """Map a user key to (base, unit); raises ConfigError for unknown keys."""
    if key in PARAMETERS and PARAMETERS[key].kind != "time":
        return key, None
    for unit in sorted(TIME_UNITS_PS, key=len, reverse=True):
        suffix = "_" + unit
        if key.endswith(suffix):
            base = key[: -len(suffix)]
            if base in PARAMETERS and PARAMETERS[base].kind == "time":
                return base, unit
    if key in PARAMETERS:
        raise ConfigError(f"key {key!r} needs a unit suffix (one of {', '.join(TIME_UNITS_PS)})")
    raise ConfigError(f"unknown key {key!r}")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def convert(base: str, unit: str | None, raw):
    """Parse ``raw`` (text or JSON value) for ``base`` into canonical units."""
    p = PARAMETERS[base]
    if p.kind == "float":
        return float(raw)
    if p.kind == "int":
        value = Fraction(str(raw).strip())
        if value.denominator != 1:
            raise ValueError(f"not an integer: {raw!r}")
        return int(value)
    if p.kind == "bool":
        return raw if isinstance(raw, bool) else _parse_bool(str(raw))
    if p.kind == "str":
        return str(raw).strip()
    if p.kind == "floats":
        if isinstance(raw, (list, tuple)):
            return tuple(float(v) for v in raw)
        parts = [s for s in str(raw).replace(";", ",").split(",") if s.strip()]
        return tuple(float(s) for s in parts)
    value = Fraction(str(raw).strip()) * TIME_UNITS_PS[unit] / TIME_UNITS_PS[p.unit]
    if p.integer:
        # whole canonical units; partial units round up (deadtime quantization)
        return int(-(-value.numerator // value.denominator))
    return float(value)


class RunConfig:
    """Resolved parameters: defaults, then config file, then overrides."""

    def __init__(self, values: dict | None = None):
        self.values = {canonical_key(b): p.default for b, p in PARAMETERS.items()}
        self.sources: dict[str, str] = {}
        if values:
            for key, raw in values.items():
                self.set(key, raw, source="snapshot")

    def set(self, key: str, raw, source: str = "override"):
        base, unit = split_key(key.strip())
        try:
            value = convert(base, unit, raw)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
        self.values[canonical_key(base)] = value
        self.sources[base] = source

    def __getitem__(self, base: str):
        return self.values[canonical_key(base)]

    def snapshot(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(self.values.items())}

    # builders

    def model(self) -> DiodeModel:
        return DiodeModel(
            gate=GateConfig(gate_frequency_hz=self["gate_frequency_hz"], gate_fwhm_ps=self["gate_fwhm"],
                            laser_divisor=self["laser_divisor"], profile=self["gate_profile"]),
            efficiency=EfficiencyCurve(eta_slope=self["eta_slope"]),
            dark=DarkCurve(p0=self["dark_p0"], gamma=self["dark_gamma"]),
            traps=TrapModel(k_ap=self["k_ap"], charge_factor_base=self["charge_factor_base"],
                            tau_detrap_ps=self["tau_detrap"], enabled=self["traps_enabled"]),
            temperature_label_c=self["temperature_label_c"],
        )

    def sim_config(self, emit_truth_labels: bool = False) -> SimConfig:
        return SimConfig(
            model=self.model(), bias=BiasPoint(self["v_ex"]), mu=self["mu"],
            delay_ps=self["delay"], duration_ps=self["duration"],
            logic_deadtime_ps=self["logic_deadtime"],
            spad_jitter_fwhm_ps=self["spad_jitter_fwhm"],
            reference_jitter_fwhm_ps=self["reference_jitter_fwhm"],
            tdc_resolution_ps=self["tdc_resolution"], seed=self["seed"],
            emit_truth_labels=emit_truth_labels,
        )

    def drift(self) -> DriftModel:
        return DriftModel(rate_ps_per_min=self["drift_rate_ps_per_min"],
                          efficiency_noise=self["efficiency_noise"])

    def policy(self) -> FeedbackPolicy:
        return FeedbackPolicy(interval_min=self["feedback_interval"], scan_cost_min=self["scan_cost"],
                              scan_range_ps=float(self.model().gate.period_ps),
                              coarse_step_ps=self["coarse_step"], fine_step_ps=self["fine_step"])


def parse_config_text(text: str, name: str = "<config>") -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines into {key: (value, line_number)}.

    Rejects malformed lines, unknown keys, and a quantity given twice
    (including in two different units).
    """
    entries: dict[str, tuple[str, int]] = {}
    seen: dict[str, tuple[str, int]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{name}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, value = (part.strip() for part in body.split("=", 1))
        if not key:
            raise ConfigError(f"{name}:{lineno}: missing key")
        try:
            base, _ = split_key(key)
        except ConfigError as exc:
            raise ConfigError(f"{name}:{lineno}: {exc}") from None
        if base in seen:
            prev_key, prev_line = seen[base]
            raise ConfigError(f"{name}:{lineno}: {key!r} repeats {prev_key!r} from line {prev_line}")
        seen[base] = (key, lineno)
        entries[key] = (value, lineno)
    return entries


def load_config(path: str | Path | None, overrides: list[str] = ()) -> RunConfig:
    """Defaults, then a config file (``key = value`` text or a JSON run manifest), then overrides."""
    cfg = RunConfig()
    if path is not None:
        path = Path(path)
        text = path.read_text(encoding="utf-8")
        if text.lstrip().startswith("{"):
            try:
                manifest = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid manifest JSON: {exc}") from None
            snapshot = manifest.get("config")
            if not isinstance(snapshot, dict):
                raise ConfigError(f"{path}: manifest has no 'config' object")
            for key, value in snapshot.items():
                cfg.set(key, value, source=f"{path}")
        else:
            for key, (value, lineno) in parse_config_text(text, str(path)).items():
                cfg.set(key, value, source=f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        cfg.set(key, value, source=f"--set {item}")
    return cfg
