"""Laser-to-gate phase drift, automatic peak-search feedback, and stability runs.

Long runs use an aggregate mode: each minute draws a binomial count from
the expected click probability at the current effective delay instead of
generating individual tags.  A tag-level mode exists for cross-checks.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analysis import circular_offsets, eta_from_counts
from .engine import SimConfig, derive_seed, make_rng, simulate
from .model import (
    BiasPoint,
    ConfigError,
    DiodeModel,
    GateConfig,
    dark_prob_at,
    efficiency_at,
    gate_weight,
)

# 11 % -> 10 % in 75 minutes on the 189 ps Gaussian gate
DEFAULT_DRIFT_RATE_PS_PER_MIN = 0.4672


@dataclass(frozen=True)
class DriftModel:
    rate_ps_per_min: float = DEFAULT_DRIFT_RATE_PS_PER_MIN
    efficiency_noise: float = 0.01

    def __post_init__(self):
        if self.rate_ps_per_min < 0:
            raise ConfigError("drift rate must be nonnegative")
        if not 0.0 <= self.efficiency_noise <= 0.1:
            raise ConfigError("efficiency noise fraction must lie in [0, 0.1]")


@dataclass(frozen=True)
class FeedbackPolicy:
    interval_min: int = 10
    scan_cost_min: int = 1
    scan_range_ps: float = 800.0
    coarse_step_ps: float = 25.0
    fine_step_ps: float = 5.0
    dwell_s: float | None = None  # fixed per-point dwell; None splits scan_cost_min
    fine_dwell_share: float = 0.8  # fraction of the scan time spent on the fine pass

    def __post_init__(self):
        if int(self.interval_min) != self.interval_min or int(self.scan_cost_min) != self.scan_cost_min:
            raise ConfigError("feedback interval and scan cost must be whole minutes")
        if not self.interval_min > self.scan_cost_min > 0:
            raise ConfigError("need interval_min > scan_cost_min > 0")
        if not (self.coarse_step_ps > 0 and self.fine_step_ps > 0):
            raise ConfigError("scan steps must be positive")
        if self.fine_step_ps > self.coarse_step_ps:
            raise ConfigError("fine step must not exceed the coarse step")
        if not self.scan_range_ps > 0:
            raise ConfigError("scan range must be positive")
        if self.dwell_s is not None and not self.dwell_s > 0:
            raise ConfigError("dwell must be positive")
        if not 0.0 < self.fine_dwell_share < 1.0:
            raise ConfigError("fine_dwell_share must lie in (0, 1)")

    def coarse_delays(self) -> np.ndarray:
        half = self.scan_range_ps / 2.0
        return np.arange(-half, half, self.coarse_step_ps)

    def fine_delays(self, around: float) -> np.ndarray:
        n = int(round(self.coarse_step_ps / self.fine_step_ps))
        return around + self.fine_step_ps * np.arange(-n, n + 1)

    @property
    def n_points(self) -> int:
        return self.coarse_delays().size + self.fine_delays(0.0).size

    def stage_dwell_s(self, stage: str) -> float:
        """Integration time per point of the ``"coarse"`` or ``"fine"`` pass."""
        if self.dwell_s is not None:
            return self.dwell_s
        total = self.scan_cost_min * 60.0
        if stage == "coarse":
            return total * (1.0 - self.fine_dwell_share) / self.coarse_delays().size
        return total * self.fine_dwell_share / self.fine_delays(0.0).size


@dataclass(frozen=True)
class StabilitySample:
    time_min: float
    eta: float
    delay_ps: float
    in_scan: bool


@dataclass(frozen=True)
class StabilityTrace:
    samples: tuple[StabilitySample, ...] = field(default_factory=tuple)
    failed_scans: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time_min for s in self.samples], dtype=float)

    @property
    def etas(self) -> np.ndarray:
        return np.array([s.eta for s in self.samples], dtype=float)

    @property
    def delays(self) -> np.ndarray:
        return np.array([s.delay_ps for s in self.samples], dtype=float)

    @property
    def in_scan(self) -> np.ndarray:
        return np.array([s.in_scan for s in self.samples], dtype=bool)

    def operating_etas(self) -> np.ndarray:
        return self.etas[~self.in_scan]

    @property
    def duty_factor(self) -> float:
        return float(np.mean(~self.in_scan)) if self.samples else 0.0

    def crossing_time(self, level: float) -> float | None:
        """First time the operating efficiency falls to ``level``, interpolated between samples."""
        t = self.times[~self.in_scan]
        eta = self.operating_etas()
        below = np.nonzero(eta <= level)[0]
        if below.size == 0:
            return None
        i = int(below[0])
        if i == 0:
            return float(t[0])
        return float(np.interp(level, [eta[i], eta[i - 1]], [t[i], t[i - 1]]))


@dataclass(frozen=True)
class PeakSearchResult:
    delay_ps: float
    failed: bool
    delays_ps: np.ndarray
    counts: np.ndarray


def drift_offset(drift: DriftModel, t_min: float) -> float:
    if t_min < 0:
        raise ValueError("time must be nonnegative")
    return drift.rate_ps_per_min * t_min


def drift_rate_for(gate: GateConfig, eta_start: float, eta_end: float, minutes: float) -> float:
    """Linear drift rate that takes a Gaussian-gated efficiency from ``eta_start`` to ``eta_end``."""
    if not eta_start > eta_end > 0:
        raise ValueError("need eta_start > eta_end > 0")
    return gate.sigma_ps * math.sqrt(2.0 * math.log(eta_start / eta_end)) / minutes


def peak_search(counter: Callable[[float, float], float], policy: FeedbackPolicy,
                previous_delay_ps: float = 0.0) -> PeakSearchResult:
    """Coarse scan over the range, then a fine scan around the coarse maximum.

    ``counter(delay_ps, dwell_s)`` returns the counts integrated at one
    delay.  Ties go to the smallest delay.  If every point reads zero the
    previous delay is kept and the result is flagged as failed.
    """
    coarse = policy.coarse_delays()
    dwell = policy.stage_dwell_s("coarse")
    coarse_counts = np.array([counter(float(d), dwell) for d in coarse], dtype=float)
    if not coarse_counts.max() > 0:
        return PeakSearchResult(previous_delay_ps, True, coarse, coarse_counts)
    best = float(coarse[int(np.argmax(coarse_counts))])
    fine = policy.fine_delays(best)
    dwell = policy.stage_dwell_s("fine")
    fine_counts = np.array([counter(float(d), dwell) for d in fine], dtype=float)
    delays = np.concatenate([coarse, fine])
    counts = np.concatenate([coarse_counts, fine_counts])
    if fine_counts.max() > 0:
        best = float(fine[int(np.argmax(fine_counts))])
    return PeakSearchResult(best, False, delays, counts)


class AggregateCounter:
    """Binomial click counts at a given effective delay, without tag generation."""

    def __init__(self, model: DiodeModel, bias: BiasPoint, mu: float, rng: np.random.Generator,
                 noise: bool = True):
        self.model, self.bias, self.mu, self.rng, self.noise = model, bias, mu, rng, noise
        self.eta = efficiency_at(model, bias)
        self.p_dc = dark_prob_at(model, bias)

    def click_prob(self, offset_ps: float, eta_factor: float = 1.0) -> float:
        w = gate_weight(self.model.gate, offset_ps)
        return 1.0 - (1.0 - self.p_dc) * math.exp(-self.mu * self.eta * eta_factor * w)

    def pulses(self, seconds: float) -> int:
        return int(round(self.model.gate.laser_frequency_hz * seconds))

    def count(self, offset_ps: float, seconds: float, eta_factor: float = 1.0) -> tuple[int, int]:
        n = self.pulses(seconds)
        p = self.click_prob(offset_ps, eta_factor)
        if not self.noise:
            return n * p, n
        return int(self.rng.binomial(n, p)), n


class TagCounter:
    """Main-peak click counts from full tag-level simulation runs."""

    def __init__(self, model: DiodeModel, bias: BiasPoint, mu: float, seed: int,
                 jitter: tuple[float, float] = (288.0, 99.0)):
        self.model, self.bias, self.mu, self.seed = model, bias, mu, seed
        self.p_dc = dark_prob_at(model, bias)
        self.jitter = jitter
        self.runs = 0

    def count(self, offset_ps: float, seconds: float, eta_factor: float = 1.0) -> tuple[int, int]:
        model = self.model
        if eta_factor != 1.0:
            model = dataclasses.replace(model, efficiency=dataclasses.replace(
                model.efficiency, eta_slope=model.efficiency.eta_slope * eta_factor))
        seed = derive_seed(self.seed, self.runs)
        self.runs += 1
        cfg = SimConfig(model=model, bias=self.bias, mu=self.mu, delay_ps=offset_ps,
                        duration_ps=int(round(seconds * 1e12)), seed=seed,
                        spad_jitter_fwhm_ps=self.jitter[0], reference_jitter_fwhm_ps=self.jitter[1])
        stream = simulate(cfg)
        gate = model.gate
        offs = circular_offsets(stream.tags, 0.0, gate.laser_period_ps)
        main = int(np.count_nonzero((offs >= -gate.period_ps / 2) & (offs < gate.period_ps / 2)))
        return main, stream.truth.n_laser_pulses


def run_stability(hours: float, feedback: bool, drift: DriftModel | None = None,
                  policy: FeedbackPolicy | None = None, model: DiodeModel | None = None,
                  bias: BiasPoint | None = None, mu: float = 0.1, seed: int = 0,
                  mode: str = "aggregate", sample_seconds: float = 60.0,
                  counting_noise: bool = True) -> StabilityTrace:
    """Minute-resolution efficiency trace under phase drift.

    The effective photon offset from the gate center is
    ``delay_setting + drift(t)``.  With feedback the loop operates for
    ``interval_min`` minutes, then spends ``scan_cost_min`` minutes in a
    peak search and moves the delay to the maximum found.  In tag mode
    each operating minute is represented by a ``sample_seconds`` slice.
    ``counting_noise=False`` replaces binomial draws by expected counts
    (aggregate mode only).
    """
    if not hours > 0:
        raise ValueError("hours must be positive")
    drift = drift or DriftModel()
    policy = policy or FeedbackPolicy()
    model = model or DiodeModel()
    bias = bias or BiasPoint(0.55)
    rng = make_rng(seed)
    if mode == "aggregate":
        counter = AggregateCounter(model, bias, mu, rng, noise=counting_noise)
        sample_seconds = 60.0
    elif mode == "tags":
        counter = TagCounter(model, bias, mu, seed)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    p_dc = dark_prob_at(model, bias)

    n_minutes = int(round(hours * 60))
    cycle = int(policy.interval_min + policy.scan_cost_min)
    delay = 0.0
    samples = []
    failed = 0
    m = 0
    while m < n_minutes:
        scanning = feedback and (m % cycle) >= policy.interval_min
        if scanning:
            t_scan = float(m)
            etas = []

            def read(d, dwell, t_scan=t_scan, etas=etas):
                clicks, pulses = counter.count(d + drift_offset(drift, t_scan), dwell)
                etas.append(eta_from_counts(clicks, pulses, mu, p_dc))
                return clicks

            result = peak_search(read, policy, previous_delay_ps=delay)
            failed += int(result.failed)
            scan_eta = float(np.mean(etas)) if etas else 0.0
            for k in range(int(policy.scan_cost_min)):
                if m + k >= n_minutes:
                    break
                samples.append(StabilitySample(float(m + k), min(max(scan_eta, 0.0), 1.0), delay, True))
            delay = result.delay_ps
            m += int(policy.scan_cost_min)
            continue

        factor = 1.0
        if drift.efficiency_noise > 0:
            factor = max(1.0 + drift.efficiency_noise * rng.standard_normal(), 0.0)
        clicks, pulses = counter.count(delay + drift_offset(drift, float(m)), sample_seconds, factor)
        eta = eta_from_counts(clicks, pulses, mu, p_dc)
        samples.append(StabilitySample(float(m), min(eta, 1.0), delay, False))
        m += 1
    return StabilityTrace(samples=tuple(samples), failed_scans=failed)
