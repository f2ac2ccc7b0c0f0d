"""Synthetic datasets mirroring the device characterization measurements.

Used by the CLI demo presets and the test suite: a spot-test raster of the
quartered detector, a source-toggle background table, and a fluorescence-vs-
offset dataset for the quantum-efficiency fit.
"""

from __future__ import annotations

import numpy as np

from .estimation import SpotScan, ToggleMeasurement
from .model import RateBudget, Scenario, scattering_rate
from .optics import collection_efficiency


def quarter_disc_response(x, y, outer_radius=11.0e-6, guard_width=2.0e-6):
    """Analytic response of the quarter-disc detector with guard-ring taper."""
    rr = np.hypot(x, y)
    w = (
        np.clip((outer_radius - rr) / guard_width, 0.0, 1.0)
        * np.clip(x / guard_width, 0.0, 1.0)
        * np.clip(y / guard_width, 0.0, 1.0)
    )
    return np.where(rr > outer_radius, 0.0, w)


def make_spot_scan(
    step: float = 0.8e-6,
    extent: float = 14e-6,
    peak_rate: float = 50e3,
    dark_rate: float = 1.2e3,
    dwell: float = 0.5,
    outer_radius: float = 11.0e-6,
    guard_width: float = 2.0e-6,
    seed: int = 0,
) -> SpotScan:
    """Poisson-noised raster scan of the quarter-disc response."""
    rng = np.random.default_rng(seed)
    n = int(np.ceil(extent / step))
    coords = (np.arange(n) + 0.5) * step
    xx, yy = np.meshgrid(coords, coords, indexing="ij")
    w = quarter_disc_response(xx, yy, outer_radius, guard_width)
    mean_counts = (peak_rate * w + dark_rate) * dwell
    counts = rng.poisson(mean_counts)
    return SpotScan(step=step, counts=counts, dark_rate=dark_rate, dwell=dwell)


CUMULATIVE_TOGGLE_DESIGN = (
    (False, False, False, True, False),  # dark only
    (False, False, False, True, True),  # + trap rf
    (False, False, True, True, True),  # + detection-laser scatter
    (False, True, True, True, True),  # + repump scatter
    (True, True, True, True, True),  # + ion
)


def make_toggle_measurements(
    budget: RateBudget,
    design=CUMULATIVE_TOGGLE_DESIGN,
    dwell: float = 50.0,
    noisy: bool = False,
    seed: int = 0,
) -> list[ToggleMeasurement]:
    """Toggle table for the given budget; exact rates unless noisy."""
    rng = np.random.default_rng(seed)
    rates = np.array(
        [
            budget.fluorescence,
            budget.repump_scatter,
            budget.doppler_scatter,
            budget.dark_counts,
            budget.rf_pickup,
        ]
    )
    out = []
    for flags in design:
        rate = float(rates[np.array(flags)].sum())
        if noisy and rate > 0:
            rate = rng.poisson(rate * dwell) / dwell
        out.append(ToggleMeasurement(active_sources=tuple(flags), measured_rate=rate, dwell=dwell))
    return out


def toggle_measurements_to_csv(measurements) -> str:
    lines = ["fluorescence,repump,doppler,dark,rf,rate_kcps,dwell_s"]
    for m in measurements:
        flags = ",".join("1" if f else "0" for f in m.active_sources)
        lines.append(f"{flags},{m.measured_rate / 1e3:.9g},{m.dwell:.9g}")
    return "\n".join(lines) + "\n"


def toggle_measurements_from_csv(text: str) -> list[ToggleMeasurement]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "fluorescence,repump,doppler,dark,rf,rate_kcps,dwell_s":
        raise ValueError(
            "toggle CSV needs header 'fluorescence,repump,doppler,dark,rf,rate_kcps,dwell_s'"
        )
    out = []
    for rowno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 7:
            raise ValueError(f"toggle CSV row {rowno}: expected 7 columns, got {len(parts)}")
        try:
            flags = tuple(bool(int(p)) for p in parts[:5])
            rate = float(parts[5]) * 1e3
            dwell = float(parts[6])
        except ValueError as exc:
            raise ValueError(f"toggle CSV row {rowno}: {exc}") from exc
        out.append(ToggleMeasurement(active_sources=flags, measured_rate=rate, dwell=dwell))
    return out


def make_qe_dataset(
    scenario: Scenario,
    offsets,
    quantum_efficiency: float = 0.24,
    integration_time: float = 50.0,
    seed: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """(offsets, background-subtracted measured fluorescence rates) with Poisson noise.

    Counts accumulate over integration_time with the background rate known and
    subtracted, as in a paired ion/no-ion measurement.
    """
    rng = np.random.default_rng(seed)
    offsets = np.asarray(list(offsets), dtype=float)
    emit = scattering_rate(scenario.emitter)
    background = scenario.budget.background_total()
    measured = np.empty_like(offsets)
    for i, off in enumerate(offsets):
        ce = collection_efficiency(scenario.geometry.with_offset(off), warn_on_shadowing=False)
        signal = quantum_efficiency * emit * ce
        total = rng.poisson((signal + background) * integration_time) / integration_time
        measured[i] = max(total - background, 0.0)
    return offsets, measured


def qe_dataset_to_csv(offsets, rates) -> str:
    lines = ["offset_um,rate_kcps"]
    for off, r in zip(offsets, rates):
        lines.append(f"{off * 1e6:.9g},{r / 1e3:.9g}")
    return "\n".join(lines) + "\n"


def qe_dataset_from_csv(text: str) -> tuple[np.ndarray, np.ndarray]:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != "offset_um,rate_kcps":
        raise ValueError("QE dataset CSV needs header 'offset_um,rate_kcps'")
    offs, rates = [], []
    for rowno, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 2:
            raise ValueError(f"QE dataset row {rowno}: expected 2 columns")
        try:
            offs.append(float(parts[0]) * 1e-6)
            rates.append(float(parts[1]) * 1e3)
        except ValueError as exc:
            raise ValueError(f"QE dataset row {rowno}: {exc}") from exc
    return np.array(offs), np.array(rates)
