"""Offline statistics on tag streams.

Folded histograms, the paired illuminated/dark afterpulse estimator, peak
FWHM fits, jitter quadrature subtraction and the detrapping-lifetime fit.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

from .engine import TagStream
from .model import FWHM_PER_SIGMA, GateConfig


class FitError(RuntimeError):
    """A peak or envelope fit could not produce a meaningful value."""


class StatisticsError(RuntimeError):
    """Input counts are insufficient for the requested estimate."""


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_width_ps: int
    origin_ps: int
    counts: np.ndarray
    fold_period_ps: int | None = None

    def __post_init__(self):
        if self.bin_width_ps <= 0:
            raise ValueError("bin_width_ps must be positive")

    @property
    def centers_ps(self) -> np.ndarray:
        return self.origin_ps + (np.arange(self.counts.size) + 0.5) * self.bin_width_ps

    @property
    def edges_ps(self) -> np.ndarray:
        return self.origin_ps + np.arange(self.counts.size + 1) * self.bin_width_ps

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class AfterpulseReport:
    c_tol: int
    c_dc: int
    c_main: int
    laser_divisor: int
    c_ph: float
    p_ap: float
    mean_interval_ps: float
    gate_period_ps: int
    p_ap_per_gate: float
    p_ap_per_ns: float
    p_ap_stderr: float
    main_peak_center_ps: float
    main_peak_half_window_ps: float

    def as_record(self) -> dict:
        return {
            "c_tol": self.c_tol,
            "c_dc": self.c_dc,
            "c_main": self.c_main,
            "c_ph": self.c_ph,
            "p_ap": self.p_ap,
            "p_ap_stderr": self.p_ap_stderr,
            "mean_interval_ps": self.mean_interval_ps,
            "p_ap_per_gate": self.p_ap_per_gate,
            "p_ap_per_ns": self.p_ap_per_ns,
            "main_peak_center_ps": self.main_peak_center_ps,
            "main_peak_half_window_ps": self.main_peak_half_window_ps,
        }


@dataclass(frozen=True)
class JitterReport:
    total_fwhm_ps: float
    reference_fwhm_ps: float
    device_fwhm_ps: float

    def as_record(self) -> dict:
        return {
            "total_fwhm_ps": self.total_fwhm_ps,
            "reference_fwhm_ps": self.reference_fwhm_ps,
            "device_fwhm_ps": self.device_fwhm_ps,
        }


@dataclass(frozen=True)
class PeakFit:
    fwhm: float
    center: float
    amplitude: float
    background: float
    method: str  # "gaussian" or "interpolation"

    def __iter__(self):
        # unpacks as (fwhm, center, amplitude)
        return iter((self.fwhm, self.center, self.amplitude))


@dataclass(frozen=True, eq=False)
class ScanResult:
    delays_ps: np.ndarray
    counts: np.ndarray
    fitted_fwhm_ps: float
    fitted_center_ps: float
    fitted_amplitude: float
    method: str = "gaussian"
    response: np.ndarray | None = None  # quantity actually fitted, when not the raw counts

    def __post_init__(self):
        if len(self.delays_ps) != len(self.counts):
            raise ValueError("delays and counts must have equal length")


def fold_histogram(stream: TagStream, fold_period_ps: int, bin_width_ps: int) -> Histogram:
    """Histogram of tag phases ``t mod fold_period_ps``.

    The last bin is truncated when the period is not a multiple of the bin width.
    """
    if not fold_period_ps >= bin_width_ps > 0:
        raise ValueError("need fold_period_ps >= bin_width_ps > 0")
    n_bins = -(-int(fold_period_ps) // int(bin_width_ps))
    tags = np.asarray(stream.tags if isinstance(stream, TagStream) else stream, dtype=np.uint64)
    phase = tags % np.uint64(fold_period_ps)
    idx = (phase // np.uint64(bin_width_ps)).astype(np.int64)
    counts = np.bincount(idx, minlength=n_bins)
    return Histogram(bin_width_ps=int(bin_width_ps), origin_ps=0, counts=counts,
                     fold_period_ps=int(fold_period_ps))


def delay_histogram(stream: TagStream, max_delay_ps: int, bin_width_ps: int) -> Histogram:
    """Start-multistop histogram: every delay ``t_j - t_i`` with ``0 < t_j - t_i < max_delay_ps``.

    Each detection starts a clock that every later detection inside the
    window stops; the afterpulse side peaks ride on a flat accidental floor.
    """
    tags = np.asarray(stream.tags, dtype=np.int64)
    n_bins = -(-int(max_delay_ps) // int(bin_width_ps))
    counts = np.zeros(n_bins, dtype=np.int64)
    lag = 1
    while lag < tags.size:
        dt = tags[lag:] - tags[:-lag]
        inside = dt < max_delay_ps
        if not inside.any():
            break
        dt = dt[inside & (dt > 0)]
        counts += np.bincount(dt // bin_width_ps, minlength=n_bins)[:n_bins]
        lag += 1
    return Histogram(bin_width_ps=int(bin_width_ps), origin_ps=0, counts=counts)


def circular_offsets(tags, center_ps: float, period_ps: int) -> np.ndarray:
    """Signed phase distance of each tag from ``center_ps`` modulo ``period_ps``."""
    phase = np.asarray(tags, dtype=np.uint64) % np.uint64(period_ps)
    return np.mod(phase.astype(float) - center_ps + period_ps / 2.0, period_ps) - period_ps / 2.0


def main_peak_center(stream: TagStream, gate: GateConfig, bin_width_ps: int | None = None) -> float:
    """Phase of the photon peak within the laser period, refined by a Gaussian fit."""
    period = gate.laser_period_ps
    width = bin_width_ps or stream.tdc_resolution_ps
    hist = fold_histogram(stream, period, width)
    if hist.total == 0:
        raise StatisticsError("empty stream has no main peak")
    coarse = float(hist.centers_ps[np.argmax(hist.counts)])
    # re-center a one-gate window on the coarse peak and fit there
    half = gate.period_ps / 2.0
    offs = circular_offsets(stream.tags, coarse, period)
    sel = offs[np.abs(offs) < half]
    edges = np.arange(-half, half + width, width)
    counts, _ = np.histogram(sel, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    try:
        fit = fit_peak_fwhm(centers, counts)
        shift = fit.center if abs(fit.center) < half else 0.0
    except FitError:
        shift = 0.0
    return float(np.mod(coarse + shift, period))


def estimate_afterpulse(illum: TagStream, dark: TagStream, gate: GateConfig,
                        main_peak_window_ps: float | None = None,
                        center_ps: float | None = None) -> AfterpulseReport:
    """Afterpulse probability from paired illuminated and dark streams.

    ``p_ap = (c_tol - c_dc - c_ph) / c_ph`` with
    ``c_ph = main-peak counts - c_dc / laser_divisor``.  The main peak is
    the window ``center +- main_peak_window_ps`` on the laser-period phase
    axis; the default half-window is half a gate period.
    """
    if illum.duration_ps <= 0:
        raise StatisticsError("illuminated stream has zero duration")
    period = gate.laser_period_ps
    half = gate.period_ps / 2.0 if main_peak_window_ps is None else float(main_peak_window_ps)
    if center_ps is None:
        center_ps = main_peak_center(illum, gate)
    offs = circular_offsets(illum.tags, center_ps, period)
    c_main = int(np.count_nonzero((offs >= -half) & (offs < half)))
    c_tol = len(illum)
    c_dc = len(dark)
    d = int(gate.laser_divisor)
    c_ph = c_main - c_dc / d
    if c_ph <= 0:
        raise StatisticsError(f"photon counts not positive (c_main={c_main}, c_dc={c_dc}); "
                              "illumination too weak or main-peak window misplaced")
    p_ap = (c_tol - c_dc - c_ph) / c_ph
    # delta method on independent Poisson groups: outside, main peak, dark run
    outside = c_tol - c_main
    var = (outside + c_main * p_ap**2 + c_dc * ((p_ap + 1) / d - 1) ** 2) / c_ph**2
    stderr = math.sqrt(max(var, 0.0))
    interval = illum.duration_ps / c_ph
    per_gate = p_ap / (interval / gate.period_ps)
    return AfterpulseReport(
        c_tol=c_tol, c_dc=c_dc, c_main=c_main, laser_divisor=d, c_ph=c_ph, p_ap=p_ap,
        mean_interval_ps=interval, gate_period_ps=gate.period_ps, p_ap_per_gate=per_gate,
        p_ap_per_ns=per_gate / gate.fwhm_ns, p_ap_stderr=stderr,
        main_peak_center_ps=float(center_ps), main_peak_half_window_ps=half,
    )


def _gauss_bg(x, amplitude, center, sigma, background):
    return background + amplitude * np.exp(-0.5 * ((x - center) / sigma) ** 2)


def half_max_width(xs, ys):
    """FWHM from linear interpolation of the half-maximum crossings around the maximum.

    Returns (fwhm, center, amplitude) with the center at the crossing midpoint.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    i = int(np.argmax(ys))
    peak = ys[i]
    if not peak > 0:
        raise FitError("no positive maximum")
    half = peak / 2.0
    left = i
    while left > 0 and ys[left - 1] > half:
        left -= 1
    right = i
    while right < ys.size - 1 and ys[right + 1] > half:
        right += 1
    if left == 0 or right == ys.size - 1:
        raise FitError("no half-maximum crossing inside the sampled range")
    x_lo = np.interp(half, [ys[left - 1], ys[left]], [xs[left - 1], xs[left]])
    x_hi = np.interp(half, [ys[right + 1], ys[right]], [xs[right + 1], xs[right]])
    return float(x_hi - x_lo), float(0.5 * (x_hi + x_lo)), float(peak)


def fit_peak_fwhm(xs, ys, bin_width: float | None = None, max_evaluations: int = 2000) -> PeakFit:
    """Least-squares Gaussian-plus-background fit of a single peak.

    With ``bin_width`` the samples are treated as histogram bins of that
    width and Sheppard's correction ``sigma^2 - w^2/12`` removes the
    binning broadening.  Falls back to interpolated half-maximum crossings
    when the fit does not converge or the peak spans fewer than three samples.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 5 or xs.size != ys.size:
        raise FitError("need at least 5 paired samples")
    if not ys.max() > 0:
        raise FitError("all samples are zero")

    i = int(np.argmax(ys))
    background0 = float(np.percentile(ys, 10))
    amplitude0 = float(ys[i] - background0) or float(ys[i])
    above = np.count_nonzero(ys - background0 > amplitude0 / 2)
    step = float(np.median(np.diff(xs)))
    sigma0 = max(above * step / FWHM_PER_SIGMA, step / 2)

    if above >= 3:
        try:
            with warnings.catch_warnings():
                # noiseless input leaves the covariance undefined; only popt is used
                warnings.simplefilter("ignore", OptimizeWarning)
                popt, _ = curve_fit(_gauss_bg, xs, ys, p0=(amplitude0, xs[i], sigma0, background0),
                                    maxfev=max_evaluations)
        except (RuntimeError, ValueError):
            popt = None
        if popt is not None and np.all(np.isfinite(popt)) and popt[0] > 0 \
                and xs[0] <= popt[1] <= xs[-1]:
            sigma = abs(popt[2])
            if bin_width:
                sigma = math.sqrt(max(sigma**2 - bin_width**2 / 12.0, 0.0))
            return PeakFit(fwhm=FWHM_PER_SIGMA * sigma, center=float(popt[1]),
                           amplitude=float(popt[0]), background=float(popt[3]),
                           method="gaussian")

    fwhm, center, amplitude = half_max_width(xs, ys)
    return PeakFit(fwhm=fwhm, center=center, amplitude=amplitude, background=0.0,
                   method="interpolation")


def quadrature_subtract(total_fwhm_ps: float, reference_fwhm_ps: float) -> float:
    if reference_fwhm_ps < 0:
        raise ValueError("reference width must be nonnegative")
    if total_fwhm_ps < reference_fwhm_ps:
        raise ValueError(f"total width {total_fwhm_ps} is below the reference width "
                         f"{reference_fwhm_ps}; reference channel is miscalibrated")
    return math.sqrt(total_fwhm_ps**2 - reference_fwhm_ps**2)


def jitter_report(total_fwhm_ps: float, reference_fwhm_ps: float) -> JitterReport:
    return JitterReport(total_fwhm_ps=total_fwhm_ps, reference_fwhm_ps=reference_fwhm_ps,
                        device_fwhm_ps=quadrature_subtract(total_fwhm_ps, reference_fwhm_ps))


def peak_width_from_stream(stream: TagStream, gate: GateConfig, bin_width_ps: int | None = None) -> PeakFit:
    """FWHM of the folded photon peak, binned at the TDC resolution."""
    width = int(bin_width_ps or stream.tdc_resolution_ps)
    center = main_peak_center(stream, gate, width)
    half = gate.period_ps / 2.0
    offs = circular_offsets(stream.tags, center, gate.laser_period_ps)
    # TDC grid values sit at bin centers
    n = int(half // width)
    edges = (np.arange(-n, n + 2) - 0.5) * width
    counts, _ = np.histogram(offs, bins=edges)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return fit_peak_fwhm(centers, counts, bin_width=width)


def side_peak_amplitudes(hist: Histogram, gate: GateConfig):
    """Counts summed over each gate-period slot of an unfolded delay histogram.

    Returns (delay_ps, counts) for slots ``k >= 1`` that are not multiples
    of the laser divisor, so photon-photon coincidences are excluded.
    """
    period = gate.period_ps
    slot = np.floor((hist.centers_ps + period / 2.0) / period).astype(np.int64)
    n_slots = int(slot.max()) + 1 if slot.size else 0
    amp = np.bincount(slot, weights=hist.counts, minlength=n_slots)
    # only slots fully covered by the histogram
    full = np.bincount(slot, minlength=n_slots) * hist.bin_width_ps >= period
    k = np.arange(n_slots)
    keep = (k >= 1) & full & (k % int(gate.laser_divisor) != 0)
    return k[keep] * float(period), amp[keep]


def fit_detrap_tau(hist: Histogram, gate: GateConfig, p_ap: float = 0.0,
                   floor_fraction: float = 0.3, n_sigma: float = 3.0, n_blocks: int = 60) -> float:
    """Detrapping lifetime from the decay of the afterpulse side-peak envelope.

    Afterpulses seed further afterpulses, so the pair envelope of the
    cascade decays at ``(1 - r) / tau`` with branching ratio
    ``r = p_ap / (1 + p_ap)``; pass the measured total ``p_ap`` to undo
    this.  With ``p_ap = 0`` the raw envelope lifetime is returned.

    Side peaks are averaged in blocks of consecutive slots.  The accidental
    floor is the mean of the last ``floor_fraction`` of blocks; blocks are
    used from the start of the envelope until the first one that is not
    ``n_sigma`` standard errors above the floor, and enter a weighted
    log-linear fit of ``A exp(-t/tau)``.
    """
    t, amp = side_peak_amplitudes(hist, gate)
    if t.size < 10:
        raise FitError("fewer than 10 side-peak positions")
    size = max(1, t.size // n_blocks)
    n = t.size // size
    t_blk = t[: n * size].reshape(n, size).mean(axis=1)
    sum_blk = amp[: n * size].reshape(n, size).sum(axis=1)
    n_tail = max(2, int(round(floor_fraction * n)))
    floor = sum_blk[-n_tail:].mean()
    net = sum_blk[:-n_tail] - floor
    err = np.sqrt(sum_blk[:-n_tail] + floor / n_tail + 1.0)
    above = net > n_sigma * err
    stop = int(np.argmin(above)) if not above.all() else above.size
    if stop < 2:
        raise FitError("fewer than 2 envelope points above the noise floor")
    tt, net, err = t_blk[:stop], net[:stop], err[:stop]
    slope, _ = np.polyfit(tt, np.log(net), 1, w=net / err)
    if not slope < 0:
        raise FitError("envelope does not decay")
    return float(-1.0 / slope) / (1.0 + p_ap)


def dark_rate_hz(p_dc_per_gate: float, gate_frequency_hz: float) -> float:
    return p_dc_per_gate * gate_frequency_hz


def per_ns(p_dc_per_gate: float, gate_fwhm_ps: float) -> float:
    """Per-gate probability normalized to the effective gate width in ns."""
    return p_dc_per_gate / (gate_fwhm_ps * 1e-3)


def eta_from_counts(clicks: float, pulses: float, mu: float, p_dc: float = 0.0) -> float:
    """Invert the Poissonian click law: eta = -ln((1 - clicks/pulses)/(1 - p_dc)) / mu."""
    if pulses <= 0 or mu <= 0:
        raise StatisticsError("need positive pulse count and mu")
    frac = min(max(clicks / pulses, 0.0), 1.0 - 1e-15)
    return max(0.0, -math.log((1.0 - frac) / (1.0 - p_dc)) / mu)


def deadtime_corrected_rate(measured_rate_hz: float, deadtime_s: float) -> float:
    """Non-extending deadtime correction r / (1 - r T_d)."""
    live = 1.0 - measured_rate_hz * deadtime_s
    if live <= 0:
        raise StatisticsError("measured rate saturates the deadtime")
    return measured_rate_hz / live
