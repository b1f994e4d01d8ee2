"""Parametric device response of the sine-gated InGaAs/InP SPAD.

Bias is a normalized excess-bias parameter ``v_ex`` in [0, 1]; the
operating point with 10 % efficiency sits at ``v_ex = 0.5``.  Times are
picoseconds unless a name says otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Calibrated operating point: eta = 10 % at v_ex = 0.5 with P_dc = 4.66e-6.
OPERATING_V_EX = 0.5
OPERATING_P_DC = 4.66e-6
DEFAULT_DARK_GAMMA = math.log(10.0) / 0.5

# Mean traps per avalanche at the operating point, fitted by
# scripts/calibrate_traps.py so the paired illuminated/dark estimator
# returns P_ap = 11.7 % under the reference conditions.
DEFAULT_K_AP = 0.8238

PROFILES = ("gaussian", "raised_cosine")


class ConfigError(ValueError):
    """Invalid model or simulation parameter."""


@dataclass(frozen=True)
class BiasPoint:
    v_ex: float = OPERATING_V_EX

    def __post_init__(self):
        if not (0.0 <= self.v_ex <= 1.0) or math.isnan(self.v_ex):
            raise ConfigError(f"v_ex must lie in [0, 1], got {self.v_ex}")


@dataclass(frozen=True)
class GateConfig:
    gate_frequency_hz: float = 1.25e9
    gate_fwhm_ps: float = 189.0
    laser_divisor: int = 100
    profile: str = "gaussian"

    def __post_init__(self):
        if not self.gate_frequency_hz > 0:
            raise ConfigError("gate_frequency_hz must be positive")
        if not self.gate_fwhm_ps > 0:
            raise ConfigError("gate_fwhm_ps must be positive")
        if int(self.laser_divisor) != self.laser_divisor or self.laser_divisor < 1:
            raise ConfigError("laser_divisor must be an integer >= 1")
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown gate profile {self.profile!r}; expected one of {PROFILES}")
        if self.period_ps < 1:
            raise ConfigError("gate period below 1 ps is not representable")
        if abs(self.period_ps - 1e12 / self.gate_frequency_hz) >= 0.5:
            raise ConfigError("gate period is not representable in integer picoseconds")
        if self.gate_fwhm_ps >= self.period_ps:
            raise ConfigError("gate_fwhm_ps must be shorter than the gate period")

    @property
    def period_ps(self) -> int:
        """Gate period rounded to whole picoseconds (800 at 1.25 GHz)."""
        return int(round(1e12 / self.gate_frequency_hz))

    @property
    def laser_period_ps(self) -> int:
        return self.period_ps * int(self.laser_divisor)

    @property
    def laser_frequency_hz(self) -> float:
        return self.gate_frequency_hz / self.laser_divisor

    @property
    def sigma_ps(self) -> float:
        return self.gate_fwhm_ps / FWHM_PER_SIGMA

    @property
    def fwhm_ns(self) -> float:
        return self.gate_fwhm_ps * 1e-3


@dataclass(frozen=True)
class EfficiencyCurve:
    eta_slope: float = 0.20

    def __post_init__(self):
        if not self.eta_slope > 0:
            raise ConfigError("eta_slope must be positive")


@dataclass(frozen=True)
class DarkCurve:
    p0: float = OPERATING_P_DC / math.exp(DEFAULT_DARK_GAMMA * OPERATING_V_EX)
    gamma: float = DEFAULT_DARK_GAMMA

    def __post_init__(self):
        if not self.p0 > 0 or not self.gamma > 0:
            raise ConfigError("dark curve p0 and gamma must be positive")
        if not self.p0 * math.exp(self.gamma) < 1.0:
            raise ConfigError("dark probability per gate reaches 1 within the bias range")


@dataclass(frozen=True)
class TrapModel:
    """Trap filling and release.

    ``charge_factor_base`` stands in for the capacitance times avalanche
    duration product; the mean trap count per avalanche is
    ``k_ap * charge_factor_base * v_ex``.
    """

    k_ap: float = DEFAULT_K_AP
    charge_factor_base: float = 1.0
    tau_detrap_ps: float = 1.0e6
    enabled: bool = True

    def __post_init__(self):
        for name in ("k_ap", "charge_factor_base", "tau_detrap_ps"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive and finite")


@dataclass(frozen=True)
class DiodeModel:
    gate: GateConfig = field(default_factory=GateConfig)
    efficiency: EfficiencyCurve = field(default_factory=EfficiencyCurve)
    dark: DarkCurve = field(default_factory=DarkCurve)
    traps: TrapModel = field(default_factory=TrapModel)
    temperature_label_c: float = -50.0


def efficiency_at(model: DiodeModel, bias: BiasPoint) -> float:
    return min(model.efficiency.eta_slope * bias.v_ex, 1.0)


def dark_prob_at(model: DiodeModel, bias: BiasPoint) -> float:
    return model.dark.p0 * math.exp(model.dark.gamma * bias.v_ex)


def reduce_offset(gate: GateConfig, delta_ps):
    """Wrap offsets into [-T_g/2, T_g/2)."""
    period = gate.period_ps
    return np.mod(np.asarray(delta_ps, dtype=float) + period / 2.0, period) - period / 2.0


def gate_weight(gate: GateConfig, delta_ps):
    """Relative detection efficiency for a photon ``delta_ps`` away from the gate center.

    Accepts scalars or arrays; offsets are wrapped into one gate period first.
    """
    d = reduce_offset(gate, delta_ps)
    if gate.profile == "gaussian":
        w = np.exp(-0.5 * (d / gate.sigma_ps) ** 2)
    else:
        # raised cosine with the same FWHM; support is +-FWHM
        x = np.clip(d / gate.gate_fwhm_ps, -1.0, 1.0)
        w = 0.5 * (1.0 + np.cos(np.pi * x))
    if np.ndim(w) == 0:
        return float(w)
    return w


def capture_window_ps(gate: GateConfig) -> float:
    """Integral of the gate profile over one period (the trap-capture window)."""
    if gate.profile == "gaussian":
        half = gate.period_ps / 2.0
        return gate.sigma_ps * math.sqrt(2.0 * math.pi) * math.erf(half / (gate.sigma_ps * math.sqrt(2.0)))
    return float(gate.gate_fwhm_ps)


def photon_click_prob(model: DiodeModel, bias: BiasPoint, mu: float, delta_ps: float) -> float:
    """Click probability from photons alone (Poissonian source)."""
    if mu < 0:
        raise ConfigError("mu must be nonnegative")
    return -math.expm1(-mu * efficiency_at(model, bias) * gate_weight(model.gate, delta_ps))


def detection_prob(model: DiodeModel, bias: BiasPoint, mu: float, delta_ps: float = 0.0) -> float:
    """Click probability of an illuminated gate, darkness included."""
    p_ph = photon_click_prob(model, bias, mu, delta_ps)
    return 1.0 - (1.0 - dark_prob_at(model, bias)) * (1.0 - p_ph)


def trap_seed_mean(model: DiodeModel, bias: BiasPoint) -> float:
    if not model.traps.enabled:
        return 0.0
    return model.traps.k_ap * model.traps.charge_factor_base * bias.v_ex


def eq1_deadtime_survival(deadtime_ps: float, tau_ps: float) -> float:
    """Fraction of trapped carriers still held after ``deadtime_ps``: exp(-T_d/tau)."""
    if deadtime_ps < 0:
        raise ConfigError("deadtime must be nonnegative")
    if not tau_ps > 0:
        raise ConfigError("tau must be positive")
    return math.exp(-deadtime_ps / tau_ps)


def v_ex_for_efficiency(model: DiodeModel, eta: float) -> float:
    """Bias giving efficiency ``eta`` on the linear part of the curve."""
    v = eta / model.efficiency.eta_slope
    if not 0.0 <= v <= 1.0:
        raise ConfigError(f"efficiency {eta} is outside the reachable bias range")
    return v
