"""End-to-end characterization experiments built on the simulator.

Each driver takes a base ``SimConfig`` and derives independent sub-run
seeds from ``(seed, run_index, role)`` so results do not depend on the
order or parallelism of sub-runs.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .analysis import (
    AfterpulseReport,
    JitterReport,
    ScanResult,
    circular_offsets,
    deadtime_corrected_rate,
    delay_histogram,
    estimate_afterpulse,
    eta_from_counts,
    fit_detrap_tau,
    fit_peak_fwhm,
    jitter_report,
    main_peak_center,
    peak_width_from_stream,
)
from .engine import SimConfig, TagStream, derive_seed, simulate
from .model import BiasPoint, GateConfig

ROLE_ILLUM, ROLE_DARK = 0, 1


@dataclass(frozen=True)
class BiasRow:
    v_ex: float
    eta: float
    p_dc: float
    dark_hz: float


def main_peak_counts(stream: TagStream, center_ps: float, half_window_ps: float, laser_period_ps: int) -> int:
    offs = circular_offsets(stream.tags, center_ps, laser_period_ps)
    return int(np.count_nonzero((offs >= -half_window_ps) & (offs < half_window_ps)))


def bias_sweep(base: SimConfig, v_ex_values, mu: float = 1.0, duration_ps: int = 10**11,
               dark_duration_ps: int = 10**13, dark_deadtime_ps: int = 10**7) -> list[BiasRow]:
    """Efficiency and dark probability measured from simulated streams at each bias.

    The dark run uses a logic deadtime to strip afterpulses and corrects the
    measured rate for the resulting dead fraction.  Efficiency is inverted
    from main-peak clicks per laser pulse with the measured dark
    probability removed.
    """
    v_ex_values = list(v_ex_values)
    if not v_ex_values:
        raise ValueError("empty bias list")
    gate = base.model.gate
    rows = []
    for i, v in enumerate(v_ex_values):
        bias = BiasPoint(v)
        dark_cfg = dataclasses.replace(base, bias=bias, mu=0.0, duration_ps=int(dark_duration_ps),
                                       logic_deadtime_ps=int(dark_deadtime_ps),
                                       seed=derive_seed(base.seed, i, ROLE_DARK), emit_truth_labels=False)
        dark = simulate(dark_cfg)
        deadtime_s = dark_cfg.deadtime_gates * gate.period_ps * 1e-12
        rate = deadtime_corrected_rate(len(dark) / (dark_cfg.duration_ps * 1e-12), deadtime_s)
        p_dc = rate / gate.gate_frequency_hz

        illum_cfg = dataclasses.replace(base, bias=bias, mu=mu, duration_ps=int(duration_ps),
                                        logic_deadtime_ps=0, seed=derive_seed(base.seed, i, ROLE_ILLUM),
                                        emit_truth_labels=False)
        illum = simulate(illum_cfg)
        pulses = illum.truth.n_laser_pulses
        if v > 0 and len(illum):
            center = main_peak_center(illum, gate)
            clicks = main_peak_counts(illum, center, gate.period_ps / 2.0, gate.laser_period_ps)
            eta = eta_from_counts(clicks, pulses, mu, p_dc)
        else:
            eta = 0.0
        rows.append(BiasRow(v_ex=v, eta=eta, p_dc=p_dc, dark_hz=rate))
    return rows


def delay_scan(base: SimConfig, delays_ps, dwell_ps: int, mu: float = 1.0) -> ScanResult:
    """Detection efficiency versus laser delay, one run per delay, with a Gaussian fit.

    Main-peak clicks per pulse are inverted through the Poissonian click
    law before fitting, so detector saturation at large ``mu`` does not
    widen the measured gate.
    """
    delays = np.asarray(list(delays_ps), dtype=float)
    if dwell_ps <= 0:
        raise ValueError("dwell must be positive")
    if delays.size < 5:
        raise ValueError("need at least 5 delay points")
    gate = base.model.gate
    counts = np.empty(delays.size, dtype=np.int64)
    response = np.empty(delays.size)
    for i, d in enumerate(delays):
        cfg = dataclasses.replace(base, mu=mu, delay_ps=float(d), duration_ps=int(dwell_ps),
                                  seed=derive_seed(base.seed, i), emit_truth_labels=False)
        stream = simulate(cfg)
        # avalanches are stamped at the gate center, so the laser phase is 0
        counts[i] = main_peak_counts(stream, 0.0, gate.period_ps / 2.0, gate.laser_period_ps)
        response[i] = eta_from_counts(counts[i], stream.truth.n_laser_pulses, mu)
    fit = fit_peak_fwhm(delays, response)
    return ScanResult(delays_ps=delays, counts=counts, fitted_fwhm_ps=float(fit.fwhm),
                      fitted_center_ps=float(fit.center), fitted_amplitude=float(fit.amplitude),
                      method=fit.method, response=response)


def delay_range(start_ps: float, stop_ps: float, step_ps: float) -> np.ndarray:
    """Inclusive delay grid from start to stop."""
    if not step_ps > 0:
        raise ValueError("scan step must be positive")
    if stop_ps < start_ps:
        raise ValueError("scan stop must not precede start")
    n = int(math.floor((stop_ps - start_ps) / step_ps + 1e-9)) + 1
    return start_ps + step_ps * np.arange(n)


@dataclass(frozen=True)
class AfterpulseRun:
    report: AfterpulseReport
    illum: TagStream
    dark: TagStream
    gate: GateConfig


def afterpulse_experiment(base: SimConfig, half_window_ps: float | None = None) -> AfterpulseRun:
    """Paired illuminated and dark runs under identical settings, then the estimator."""
    illum = simulate(dataclasses.replace(base, seed=derive_seed(base.seed, 0, ROLE_ILLUM)))
    dark = simulate(dataclasses.replace(base, mu=0.0, seed=derive_seed(base.seed, 0, ROLE_DARK)))
    report = estimate_afterpulse(illum, dark, base.model.gate, half_window_ps)
    return AfterpulseRun(report=report, illum=illum, dark=dark, gate=base.model.gate)


def detrap_tau(run: AfterpulseRun, window_ps: int, bin_width_ps: int | None = None) -> float:
    """Detrapping lifetime from the illuminated stream's side-peak envelope."""
    width = bin_width_ps or run.illum.tdc_resolution_ps
    hist = delay_histogram(run.illum, window_ps, width)
    return fit_detrap_tau(hist, run.gate, p_ap=run.report.p_ap)


def jitter_experiment(base: SimConfig, mu: float = 1.0, duration_ps: int = 10**11) -> JitterReport:
    """Reference-channel and full-system peak widths, then quadrature subtraction."""
    gate = base.model.gate
    ref_cfg = dataclasses.replace(base, mu=mu, duration_ps=int(duration_ps), spad_jitter_fwhm_ps=0.0,
                                  seed=derive_seed(base.seed, 0), emit_truth_labels=False)
    sys_cfg = dataclasses.replace(base, mu=mu, duration_ps=int(duration_ps),
                                  seed=derive_seed(base.seed, 1), emit_truth_labels=False)
    reference = peak_width_from_stream(simulate(ref_cfg), gate)
    total = peak_width_from_stream(simulate(sys_cfg), gate)
    return jitter_report(total.fwhm, reference.fwhm)

