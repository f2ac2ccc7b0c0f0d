"""Event-stream generation: Poisson sources, Geiger-mode dead time, analog front end."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .model import Scenario

NS = 1e-9

SOURCE_LABELS = ("fluorescence", "repump", "doppler", "dark", "rf")


@dataclass(frozen=True)
class DeadTimeModel:
    """Nonparalyzable dead time: events within dead_time of the last kept event are dropped."""

    dead_time: float = 1e-6
    mode: str = "nonparalyzable"

    def __post_init__(self):
        if self.dead_time < 0:
            raise ValueError("dead_time must be >= 0")
        if self.mode != "nonparalyzable":
            raise ValueError(f"unsupported dead-time mode {self.mode!r}")


@dataclass(frozen=True)
class EventStream:
    """Timestamped detector events on a 1 ns grid.

    timestamps_ns are strictly increasing int64 nanoseconds; labels index into
    SOURCE_LABELS. duration is the covered span in seconds.
    """

    timestamps_ns: np.ndarray
    labels: np.ndarray
    duration: float

    def __post_init__(self):
        ts = np.asarray(self.timestamps_ns, dtype=np.int64)
        lb = np.asarray(self.labels, dtype=np.int8)
        object.__setattr__(self, "timestamps_ns", ts)
        object.__setattr__(self, "labels", lb)
        if ts.shape != lb.shape:
            raise ValueError("timestamps and labels must have equal length")
        if ts.size and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if self.duration <= 0:
            raise ValueError("duration must be > 0")

    def __len__(self):
        return self.timestamps_ns.size

    @property
    def times_s(self) -> np.ndarray:
        return self.timestamps_ns * NS

    def label_names(self) -> list[str]:
        return [SOURCE_LABELS[i] for i in self.labels]

    def counts_by_source(self) -> dict[str, int]:
        out = {name: 0 for name in SOURCE_LABELS}
        for idx, n in zip(*np.unique(self.labels, return_counts=True)):
            out[SOURCE_LABELS[idx]] = int(n)
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("timestamp_ns,label\n")
        for t, l in zip(self.timestamps_ns, self.labels):
            buf.write(f"{t},{SOURCE_LABELS[l]}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, duration: float) -> "EventStream":
        lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        if not lines or lines[0] != "timestamp_ns,label":
            raise ValueError("event CSV must have a 'timestamp_ns,label' header")
        ts, labels = [], []
        for ln in lines[1:]:
            t, name = ln.split(",")
            ts.append(int(t))
            labels.append(SOURCE_LABELS.index(name))
        return cls(np.array(ts, dtype=np.int64), np.array(labels, dtype=np.int8), duration)


def _poisson_times(rate: float, duration: float, rng) -> np.ndarray:
    n = rng.poisson(rate * duration)
    return np.sort(rng.uniform(0.0, duration, size=n))


def apply_dead_time(times_ns: np.ndarray, labels: np.ndarray, dead_ns: int):
    """Nonparalyzable filter: keep an event iff it is >= dead_ns after the last kept one."""
    if times_ns.size == 0:
        return times_ns, labels
    keep = np.zeros(times_ns.size, dtype=bool)
    last = -(1 << 62)
    gap = max(int(dead_ns), 1)  # at least the 1 ns grid, enforcing strict increase
    for i, t in enumerate(times_ns):
        if t - last >= gap:
            keep[i] = True
            last = t
    return times_ns[keep], labels[keep]


def simulate_stream(scenario: Scenario, ion_present: bool, dead: DeadTimeModel | None = None, rng=None) -> EventStream:
    """Superpose the budget's homogeneous Poisson sources into one dead-time-filtered stream.

    Fluorescence contributes only when ion_present. Deterministic given the
    scenario seed (or an explicit rng for derived trial streams).
    """
    if dead is None:
        dead = DeadTimeModel()
    if rng is None:
        rng = np.random.default_rng(scenario.rng_seed)
    b = scenario.budget
    rates = [
        b.fluorescence if ion_present else 0.0,
        b.repump_scatter,
        b.doppler_scatter,
        b.dark_counts,
        b.rf_pickup,
    ]
    all_t, all_l = [], []
    for idx, rate in enumerate(rates):
        if rate > 0:
            t = _poisson_times(rate, scenario.trial_duration, rng)
            all_t.append(t)
            all_l.append(np.full(t.size, idx, dtype=np.int8))
    if not all_t:
        return EventStream(
            np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int8), scenario.trial_duration
        )
    t = np.concatenate(all_t)
    l = np.concatenate(all_l)
    order = np.argsort(t, kind="stable")
    t_ns = np.round(t[order] / NS).astype(np.int64)
    t_ns, l = apply_dead_time(t_ns, l[order], int(round(dead.dead_time / NS)))
    return EventStream(t_ns, l, scenario.trial_duration)


def gate_and_count(stream: EventStream, gate: float) -> np.ndarray:
    """Counts in consecutive windows of length gate partitioning [0, duration)."""
    if gate <= 0:
        raise ValueError("gate must be > 0")
    n_gates = int(np.floor(stream.duration / gate + 1e-9))
    if n_gates < 1:
        raise ValueError("gate is longer than the stream duration")
    edges_ns = np.round(np.arange(n_gates + 1) * gate / NS).astype(np.int64)
    counts, _ = np.histogram(stream.timestamps_ns, bins=edges_ns)
    return counts.astype(np.int64)


@dataclass(frozen=True)
class FrontEndParams:
    """Analog chain: quench pulse shape, low-pass filter, rf pickup, Schmitt trigger."""

    quench_resistance: float = 300e3
    pulse_amplitude_range: tuple[float, float] = (0.1, 0.5)
    pulse_time_constant: float = 0.5e-6
    lowpass_cutoff: float = 1.6e6
    rf_frequency: float = 17.7e6
    rf_pickup_amplitude: float = 0.0
    schmitt_high: float = 0.08
    schmitt_low: float = 0.04

    def __post_init__(self):
        if not self.schmitt_high > self.schmitt_low > 0:
            raise ValueError("require schmitt_high > schmitt_low > 0")
        if self.lowpass_cutoff <= 0:
            raise ValueError("lowpass_cutoff must be > 0")
        lo, hi = self.pulse_amplitude_range
        if lo < 0 or hi < lo:
            raise ValueError("pulse_amplitude_range must be ordered and nonnegative")
        if self.rf_pickup_amplitude < 0:
            raise ValueError("amplitudes must be >= 0")


def _schmitt_crossings(wave: np.ndarray, high: float, low: float) -> np.ndarray:
    """Indices of rising crossings of `high`, re-armed only after dropping below `low`."""
    above = wave >= high
    rising = np.flatnonzero(above & ~np.concatenate(([False], above[:-1])))
    below_idx = np.flatnonzero(wave < low)
    crossings = []
    last = -1
    for r in rising:
        if last < 0:
            crossings.append(r)
            last = r
        else:
            j = np.searchsorted(below_idx, last, side="right")
            if j < below_idx.size and below_idx[j] < r:
                crossings.append(r)
                last = r
    return np.array(crossings, dtype=np.int64)


def simulate_frontend(events: EventStream, params: FrontEndParams, sample_rate: float, rng=None):
    """Render the analog waveform for an event stream and redigitize it.

    Each event adds a single-exponential pulse with a uniformly drawn amplitude;
    the sum plus an rf sinusoid passes a first-order low-pass before the
    Schmitt trigger. Returns (time axis, waveform, digital EventStream).
    """
    if sample_rate < 10 * params.lowpass_cutoff:
        raise ValueError("sample_rate must be at least 10x the low-pass cutoff")
    if rng is None:
        rng = np.random.default_rng(0)
    dt = 1.0 / sample_rate
    span = events.duration + 5 * params.pulse_time_constant
    n = int(np.ceil(span / dt))
    t = np.arange(n) * dt
    wave = np.zeros(n)

    lo, hi = params.pulse_amplitude_range
    amps = rng.uniform(lo, hi, size=len(events))
    tau = params.pulse_time_constant
    for t0, amp in zip(events.times_s, amps):
        i0 = int(np.ceil(t0 / dt))
        if i0 >= n:
            continue
        wave[i0:] += amp * np.exp(-(t[i0:] - t0) / tau)

    if params.rf_pickup_amplitude > 0:
        wave = wave + params.rf_pickup_amplitude * np.sin(2 * np.pi * params.rf_frequency * t)

    # exact first-order low-pass discretization
    a = np.exp(-dt * 2 * np.pi * params.lowpass_cutoff)
    filtered = signal.lfilter([1 - a], [1, -a], wave)

    idx = _schmitt_crossings(filtered, params.schmitt_high, params.schmitt_low)
    ts_ns = np.round(idx * dt / NS).astype(np.int64)
    keep = np.concatenate(([True], np.diff(ts_ns) > 0)) if ts_ns.size else np.empty(0, dtype=bool)
    ts_ns = ts_ns[keep]
    digital = EventStream(ts_ns, np.zeros(ts_ns.size, dtype=np.int8), max(span, events.duration))
    return t, filtered, digital


def waveform_to_csv(t: np.ndarray, wave: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write("time_s,volts\n")
    for ti, v in zip(t, wave):
        buf.write(f"{ti:.9e},{v:.6e}\n")
    return buf.getvalue()
