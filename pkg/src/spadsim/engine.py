"""Event-level Monte Carlo generation of detector time-tag streams.

The timebase is integer picoseconds held in 64-bit integers.  Gate ``k``
is centered at ``k * T_g``; laser pulses illuminate every
``laser_divisor``-th gate starting at gate 0.  Avalanche physics works on
gate indices, and jitter/TDC quantization only touch emitted timestamps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import (
    FWHM_PER_SIGMA,
    BiasPoint,
    ConfigError,
    DiodeModel,
    dark_prob_at,
    detection_prob,
    gate_weight,
    photon_click_prob,
    trap_seed_mean,
)

RNG_ALGORITHM = "numpy.random.PCG64 seeded via SeedSequence(seed, spawn_key=(run_index,))"

PHOTON, DARK, AFTERPULSE = 0, 1, 2
LABEL_NAMES = ("photon", "dark", "afterpulse")

MAX_DURATION_PS = 2**63 - 1


def make_rng(seed: int, run_index: int | None = None) -> np.random.Generator:
    """Generator for one run; independent runs derive streams from (seed, run_index)."""
    if run_index is None:
        ss = np.random.SeedSequence(seed)
    else:
        ss = np.random.SeedSequence(seed, spawn_key=(run_index,))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit seed for an independent sub-run identified by ``keys``."""
    ss = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class SimConfig:
    model: DiodeModel = field(default_factory=DiodeModel)
    bias: BiasPoint = field(default_factory=BiasPoint)
    mu: float = 0.1
    delay_ps: float = 0.0
    duration_ps: int = 0
    logic_deadtime_ps: int = 0
    spad_jitter_fwhm_ps: float = 288.0
    reference_jitter_fwhm_ps: float = 99.0
    tdc_resolution_ps: int = 50
    seed: int = 0
    emit_truth_labels: bool = False

    def __post_init__(self):
        if not self.mu >= 0:
            raise ConfigError("mu must be nonnegative")
        if int(self.duration_ps) != self.duration_ps or not 0 <= self.duration_ps < 2**63:
            raise ConfigError("duration_ps must be an integer in [0, 2**63)")
        if int(self.logic_deadtime_ps) != self.logic_deadtime_ps or self.logic_deadtime_ps < 0:
            raise ConfigError("logic_deadtime_ps must be a nonnegative integer")
        if int(self.tdc_resolution_ps) != self.tdc_resolution_ps or self.tdc_resolution_ps <= 0:
            raise ConfigError("tdc_resolution_ps must be a positive integer")
        if self.spad_jitter_fwhm_ps < 0 or self.reference_jitter_fwhm_ps < 0:
            raise ConfigError("jitter FWHMs must be nonnegative")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")

    @property
    def n_gates(self) -> int:
        """Gates whose center falls inside [0, duration)."""
        return -(-int(self.duration_ps) // self.model.gate.period_ps)

    @property
    def deadtime_gates(self) -> int:
        """Logic deadtime rounded up to whole gate periods."""
        return -(-int(self.logic_deadtime_ps) // self.model.gate.period_ps)

    @property
    def jitter_fwhm_ps(self) -> float:
        return math.hypot(self.spad_jitter_fwhm_ps, self.reference_jitter_fwhm_ps)


@dataclass(frozen=True)
class TruthCounters:
    n_photon: int = 0
    n_dark: int = 0
    n_afterpulse: int = 0
    n_suppressed: int = 0
    n_gates: int = 0
    n_laser_pulses: int = 0

    @property
    def n_counted(self) -> int:
        return self.n_photon + self.n_dark + self.n_afterpulse


@dataclass(frozen=True, eq=False)
class TagStream:
    """Counted detections, ascending TDC-quantized timestamps in ps.

    ``gates`` holds the pre-jitter gate index of each counted avalanche and
    ``labels`` (optional) its true cause as a code into ``LABEL_NAMES``.
    """

    tags: np.ndarray
    truth: TruthCounters = field(default_factory=TruthCounters)
    labels: np.ndarray | None = None
    gates: np.ndarray | None = None
    duration_ps: int = 0
    tdc_resolution_ps: int = 50

    def __post_init__(self):
        tags = np.asarray(self.tags, dtype=np.uint64)
        tags.flags.writeable = False
        object.__setattr__(self, "tags", tags)
        if self.labels is not None and len(self.labels) != len(tags):
            raise ValueError("labels must be parallel to tags")
        if self.gates is not None and len(self.gates) != len(tags):
            raise ValueError("gates must be parallel to tags")

    def __len__(self):
        return len(self.tags)

    def label_names(self) -> list[str]:
        if self.labels is None:
            return []
        return [LABEL_NAMES[i] for i in self.labels]


def next_event_gap(rng: np.random.Generator, p: float) -> int:
    """Gates until the next success of a per-gate Bernoulli(p) process (>= 1)."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"per-gate probability must lie in (0, 1), got {p}")
    return int(rng.geometric(p))


def bernoulli_positions(rng: np.random.Generator, n: int, p: float) -> np.ndarray:
    """Indices of successes among ``n`` Bernoulli(p) trials, by geometric skipping."""
    if n <= 0 or p <= 0.0:
        return np.empty(0, dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    mean = n * p
    chunk = int(mean + 6.0 * math.sqrt(mean) + 16)
    out = []
    start = -1
    while True:
        pos = start + np.cumsum(rng.geometric(p, size=chunk).astype(np.int64))
        if pos[-1] >= n:
            out.append(pos[pos < n])
            break
        out.append(pos)
        start = int(pos[-1])
        chunk = max(16, int((n - start) * p * 1.2) + 16)
    return np.concatenate(out)


def _afterpulse_gates(rng, parents, nbar, tau_ps, model: DiodeModel):
    """Accepted afterpulse gate indices for each parent avalanche gate.

    Returns (child_gates, parent_index) in draw order.
    """
    n_traps = rng.poisson(nbar, size=parents.size)
    parent_index = np.repeat(np.arange(parents.size), n_traps)
    release = rng.exponential(tau_ps, size=parent_index.size)
    period = model.gate.period_ps
    ahead = np.floor(release / period + 0.5).astype(np.int64)
    offset = release - ahead * period
    accept = rng.random(parent_index.size) < gate_weight(model.gate, offset)
    # release inside the parent's own gate collapses into that avalanche
    keep = accept & (ahead >= 1)
    return parents[parent_index[keep]] + ahead[keep], parent_index[keep]


def schedule_afterpulses(rng: np.random.Generator, avalanche_time_ps: int, model: DiodeModel,
                         bias: BiasPoint) -> list[tuple[int, int]]:
    """Afterpulse candidates seeded by one avalanche, as sorted (time_ps, gate_index)."""
    period = model.gate.period_ps
    nbar = trap_seed_mean(model, bias)
    if nbar <= 0:
        return []
    parent = np.array([int(round(avalanche_time_ps / period))], dtype=np.int64)
    gates, _ = _afterpulse_gates(rng, parent, nbar, model.traps.tau_detrap_ps, model)
    gates = np.sort(gates)
    return [(int(g) * period, int(g)) for g in gates]


@numba.njit(cache=True)
def _greedy_counted(times, deadtime):
    counted = np.zeros(times.size, dtype=np.bool_)
    last = 0
    seen = False
    for i in range(times.size):
        if not seen or times[i] - last >= deadtime:
            counted[i] = True
            last = times[i]
            seen = True
    return counted


def deadtime_mask(times: np.ndarray, deadtime) -> np.ndarray:
    """Boolean mask of events counted under a non-extending logic deadtime."""
    times = np.asarray(times, dtype=np.int64)
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("events must be sorted ascending")
    if deadtime <= 0:
        return np.ones(times.size, dtype=bool)
    return _greedy_counted(times, np.int64(deadtime))


def apply_logic_deadtime(events, deadtime_ps):
    """Split sorted avalanche times into (counted, suppressed).

    An event counts iff it lies at least ``deadtime_ps`` after the last
    counted event; suppressed events do not restart the deadtime.
    """
    events = np.asarray(events, dtype=np.int64)
    mask = deadtime_mask(events, deadtime_ps)
    return events[mask], events[~mask]


def stamp(event_time_ps, jitter_fwhm_ps: float, tdc_resolution_ps: int, rng: np.random.Generator):
    """Add Gaussian timing jitter and quantize to the TDC grid (nearest multiple, floor 0)."""
    if tdc_resolution_ps <= 0:
        raise ValueError("tdc_resolution_ps must be positive")
    res = int(tdc_resolution_ps)
    t = np.asarray(event_time_ps, dtype=np.int64)
    # split off the grid-aligned part so large times stay exact
    base = t - np.mod(t, res)
    frac = np.mod(t, res).astype(float)
    if jitter_fwhm_ps > 0:
        frac = frac + rng.normal(0.0, jitter_fwhm_ps / FWHM_PER_SIGMA, size=t.shape)
    q = base + np.floor(frac / res + 0.5).astype(np.int64) * res
    q = np.maximum(q, 0)
    if q.ndim == 0:
        return int(q)
    return q


def _primary_avalanches(rng, config: SimConfig, n_gates: int):
    model, bias = config.model, config.bias
    d = int(model.gate.laser_divisor)
    n_pulses = -(-n_gates // d)
    p_click = detection_prob(model, bias, config.mu, config.delay_ps)
    p_ph = photon_click_prob(model, bias, config.mu, config.delay_ps)
    p_dc = dark_prob_at(model, bias)

    lit = bernoulli_positions(rng, n_pulses, p_click) * d
    lit_labels = np.where(rng.random(lit.size) * p_click < p_ph, PHOTON, DARK).astype(np.uint8)

    if d > 1:
        ordinal = bernoulli_positions(rng, n_gates - n_pulses, p_dc)
        unlit = (ordinal // (d - 1)) * d + 1 + ordinal % (d - 1)
    else:
        unlit = np.empty(0, dtype=np.int64)

    gates = np.concatenate([lit, unlit])
    labels = np.concatenate([lit_labels, np.full(unlit.size, DARK, dtype=np.uint8)])
    order = np.argsort(gates, kind="stable")
    return gates[order], labels[order], n_pulses


def simulate(config: SimConfig) -> TagStream:
    """Generate the counted tag stream for one run.  Deterministic in ``config.seed``."""
    rng = make_rng(config.seed)
    model = config.model
    n_gates = config.n_gates
    if n_gates == 0:
        empty = np.empty(0, dtype=np.uint64)
        return TagStream(tags=empty, truth=TruthCounters(),
                         labels=np.empty(0, dtype=np.uint8) if config.emit_truth_labels else None,
                         gates=np.empty(0, dtype=np.int64), duration_ps=int(config.duration_ps),
                         tdc_resolution_ps=int(config.tdc_resolution_ps))

    gates, labels, n_pulses = _primary_avalanches(rng, config, n_gates)

    nbar = trap_seed_mean(model, config.bias)
    if nbar > 0 and gates.size:
        occupied = gates
        parents = gates
        found_gates = [gates]
        found_labels = [labels]
        while parents.size:
            children, _ = _afterpulse_gates(rng, parents, nbar, model.traps.tau_detrap_ps, model)
            children = np.unique(children[children < n_gates])
            # one avalanche per gate
            children = children[~np.isin(children, occupied, assume_unique=True)]
            if not children.size:
                break
            occupied = np.union1d(occupied, children)
            found_gates.append(children)
            found_labels.append(np.full(children.size, AFTERPULSE, dtype=np.uint8))
            parents = children
        gates = np.concatenate(found_gates)
        labels = np.concatenate(found_labels)
        order = np.argsort(gates, kind="stable")
        gates, labels = gates[order], labels[order]

    counted = deadtime_mask(gates, config.deadtime_gates)
    n_suppressed = int(gates.size - np.count_nonzero(counted))
    gates, labels = gates[counted], labels[counted]

    period = model.gate.period_ps
    times = stamp(gates * period, config.jitter_fwhm_ps, config.tdc_resolution_ps, rng)
    order = np.argsort(times, kind="stable")
    times, gates, labels = times[order], gates[order], labels[order]

    counts = np.bincount(labels, minlength=3)
    truth = TruthCounters(n_photon=int(counts[PHOTON]), n_dark=int(counts[DARK]),
                          n_afterpulse=int(counts[AFTERPULSE]), n_suppressed=n_suppressed,
                          n_gates=n_gates, n_laser_pulses=n_pulses)
    return TagStream(tags=times.astype(np.uint64), truth=truth,
                     labels=labels if config.emit_truth_labels else None,
                     gates=gates, duration_ps=int(config.duration_ps),
                     tdc_resolution_ps=int(config.tdc_resolution_ps))
