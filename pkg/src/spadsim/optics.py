"""Thin-film reflectance (transfer matrix) and geometric collection efficiency."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

WAVELENGTH_UV = 370e-9
INDEX_SIO2 = 1.47 + 0.0j
INDEX_SIN = 2.10 + 0.0j
INDEX_SI = 6.9 + 1.4j
APERTURE_DIAMETER = 38e-6


class ShadowingWarning(UserWarning):
    """Raised when a line of sight from a cell to the ion clips the aperture wall."""


@dataclass(frozen=True)
class OpticalStack:
    """Thin-film stack over an absorbing substrate, layers ordered top (ambient side) first."""

    ambient_index: complex = 1.0 + 0.0j
    layers: tuple[tuple[float, complex], ...] = ()
    substrate_index: complex = INDEX_SI
    wavelength: float = WAVELENGTH_UV

    def __post_init__(self):
        if self.wavelength <= 0:
            raise ValueError("wavelength must be > 0")
        for d, n in self.layers:
            if d <= 0:
                raise ValueError("layer thickness must be > 0")
            if n.imag < 0:
                raise ValueError("imaginary index parts must be >= 0")
        if self.substrate_index.imag < 0 or complex(self.ambient_index).imag < 0:
            raise ValueError("imaginary index parts must be >= 0")


def arc_stack() -> OpticalStack:
    """The device's anti-reflective coating: SiN over thin SiO2 passivation on Si."""
    return OpticalStack(layers=((29e-9, INDEX_SIN), (10e-9, INDEX_SIO2)))


def bare_silicon_stack() -> OpticalStack:
    return OpticalStack(layers=())


def _amplitude_coeffs(stack: OpticalStack, angle: float, pol: str):
    """Transfer-matrix r and transmittance factor for one polarization."""
    n0 = complex(stack.ambient_index)
    kpar = n0 * math.sin(angle)  # conserved transverse index

    def admittance(n):
        q = np.sqrt(n * n - kpar * kpar + 0j)
        return q if pol == "s" else n * n / q

    m = np.eye(2, dtype=complex)
    for d, n in stack.layers:
        q = np.sqrt(n * n - kpar * kpar + 0j)
        delta = 2.0 * np.pi * d / stack.wavelength * q
        e = admittance(n)
        m = m @ np.array(
            [
                [np.cos(delta), 1j * np.sin(delta) / e],
                [1j * e * np.sin(delta), np.cos(delta)],
            ]
        )
    e0 = admittance(n0)
    es = admittance(complex(stack.substrate_index))
    b, c = m @ np.array([1.0, es])
    r = (e0 * b - c) / (e0 * b + c)
    t_power = 4.0 * e0.real * es.real / abs(e0 * b + c) ** 2
    return r, t_power


def stack_reflectance(stack: OpticalStack, angle_of_incidence: float, polarization: str = "unpolarized") -> float:
    """Power reflectance |r|^2 of the stack at the given incidence angle.

    polarization is "s", "p" or "unpolarized" (mean of s and p). With no
    layers this reduces to the Fresnel reflection of the bare substrate.
    """
    if not 0.0 <= angle_of_incidence < math.pi / 2:
        raise ValueError("angle of incidence must lie in [0, pi/2)")
    if polarization not in ("s", "p", "unpolarized"):
        raise ValueError(f"unknown polarization {polarization!r}")
    if polarization == "unpolarized":
        rs, _ = _amplitude_coeffs(stack, angle_of_incidence, "s")
        rp, _ = _amplitude_coeffs(stack, angle_of_incidence, "p")
        return 0.5 * (abs(rs) ** 2 + abs(rp) ** 2)
    r, _ = _amplitude_coeffs(stack, angle_of_incidence, polarization)
    return abs(r) ** 2


def stack_transmittance(stack: OpticalStack, angle_of_incidence: float, polarization: str = "unpolarized") -> float:
    """Power transmittance into the substrate (R + T = 1 for lossless stacks)."""
    if not 0.0 <= angle_of_incidence < math.pi / 2:
        raise ValueError("angle of incidence must lie in [0, pi/2)")
    if polarization == "unpolarized":
        return 0.5 * (
            stack_transmittance(stack, angle_of_incidence, "s")
            + stack_transmittance(stack, angle_of_incidence, "p")
        )
    _, t = _amplitude_coeffs(stack, angle_of_incidence, polarization)
    return t


@dataclass(frozen=True)
class ActiveAreaMap:
    """Gridded position-dependent response of the detector, weights in [0, 1]."""

    cell_size: float
    origin: tuple[float, float]
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if self.cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        if w.ndim != 2:
            raise ValueError("weights must be a 2-D grid")
        if np.any(w < 0) or np.any(w > 1 + 1e-12):
            raise ValueError("weights must lie in [0, 1]")

    def effective_area(self) -> float:
        """Response-weighted area, cell_size^2 * sum(weights)."""
        return self.cell_size**2 * float(self.weights.sum())

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        nx, ny = self.weights.shape
        x = self.origin[0] + (np.arange(nx) + 0.5) * self.cell_size
        y = self.origin[1] + (np.arange(ny) + 0.5) * self.cell_size
        return np.meshgrid(x, y, indexing="ij")

    def centroid(self) -> tuple[float, float]:
        """Response-weighted centroid, the reference point for lateral offsets."""
        total = self.weights.sum()
        if total <= 0:
            raise ValueError("active area map has zero total response")
        xx, yy = self.cell_centers()
        return (
            float((self.weights * xx).sum() / total),
            float((self.weights * yy).sum() / total),
        )

    def save_csv(self, path):
        with open(path, "w") as f:
            f.write(self.to_csv())

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(
            f"# cell_size_um={self.cell_size * 1e6:.6g}, "
            f"origin_um={self.origin[0] * 1e6:.6g},{self.origin[1] * 1e6:.6g}\n"
        )
        for row in self.weights:
            buf.write(",".join(f"{v:.6g}" for v in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ActiveAreaMap":
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#"):
            raise ValueError("active-area CSV must start with a '# cell_size_um=..., origin_um=...' header")
        header = lines[0].lstrip("#")
        fields = dict(
            part.strip().split("=", 1) for part in header.split(", ") if "=" in part
        )
        try:
            cell = float(fields["cell_size_um"]) * 1e-6
            ox, oy = (float(v) * 1e-6 for v in fields["origin_um"].split(","))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"bad active-area CSV header: {header!r}") from exc
        rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
        return cls(cell_size=cell, origin=(ox, oy), weights=np.array(rows))

    @classmethod
    def load_csv(cls, path) -> "ActiveAreaMap":
        with open(path) as f:
            return cls.from_csv(f.read())


def quarter_disc_map(
    outer_radius: float = 11.0e-6,
    guard_width: float = 2.0e-6,
    cell_size: float = 0.4e-6,
) -> ActiveAreaMap:
    """Quartered-detector response model: a quarter disc whose efficiency tapers
    to zero across the guard-ring width at every edge.

    The defaults reproduce the reference device's ~60 um^2 effective area.
    """
    if outer_radius <= 0 or guard_width <= 0 or cell_size <= 0:
        raise ValueError("quarter-disc parameters must be > 0")
    n = int(math.ceil(outer_radius / cell_size)) + 1
    x = (np.arange(n) + 0.5) * cell_size
    xx, yy = np.meshgrid(x, x, indexing="ij")
    rr = np.hypot(xx, yy)
    w = (
        np.clip((outer_radius - rr) / guard_width, 0.0, 1.0)
        * np.clip(xx / guard_width, 0.0, 1.0)
        * np.clip(yy / guard_width, 0.0, 1.0)
    )
    w[rr > outer_radius] = 0.0
    return ActiveAreaMap(cell_size=cell_size, origin=(0.0, 0.0), weights=w)


def aperture_filling_map(
    diameter: float = APERTURE_DIAMETER, cell_size: float = 0.4e-6
) -> ActiveAreaMap:
    """Hypothetical detector whose full-response area fills the optical aperture."""
    r = diameter / 2
    n = int(math.ceil(diameter / cell_size)) + 1
    x = -r + (np.arange(n) + 0.5) * cell_size
    xx, yy = np.meshgrid(x, x, indexing="ij")
    w = (np.hypot(xx, yy) <= r).astype(float)
    return ActiveAreaMap(cell_size=cell_size, origin=(-r, -r), weights=w)


@dataclass(frozen=True)
class DetectorGeometry:
    """Ion position relative to the recessed detector plane.

    The ion sits ion_height_above_surface above the trap surface; the detector
    plane is detector_recess_below_surface below it. ion_lateral_offset is
    measured along the trap axis (+x) from the response-weighted centroid of
    the active area.
    """

    ion_lateral_offset: float = 80e-6
    ion_height_above_surface: float = 50e-6
    detector_recess_below_surface: float = 7e-6
    active_area: ActiveAreaMap = field(default_factory=quarter_disc_map)
    stack: OpticalStack = field(default_factory=arc_stack)
    emission_pattern: str = "isotropic"
    aperture_diameter: float = APERTURE_DIAMETER

    def __post_init__(self):
        if self.vertical_distance <= 0:
            raise ValueError("ion-to-detector vertical distance must be > 0")
        if self.emission_pattern not in ("isotropic", "dipole_perpendicular"):
            raise ValueError(f"unknown emission pattern {self.emission_pattern!r}")

    @property
    def vertical_distance(self) -> float:
        return self.ion_height_above_surface + self.detector_recess_below_surface

    def with_offset(self, offset: float) -> "DetectorGeometry":
        return DetectorGeometry(
            ion_lateral_offset=offset,
            ion_height_above_surface=self.ion_height_above_surface,
            detector_recess_below_surface=self.detector_recess_below_surface,
            active_area=self.active_area,
            stack=self.stack,
            emission_pattern=self.emission_pattern,
            aperture_diameter=self.aperture_diameter,
        )


def default_geometry() -> DetectorGeometry:
    return DetectorGeometry()


def _reflectance_interpolator(stack: OpticalStack, n_angles: int = 256):
    grid = np.linspace(0.0, math.pi / 2 * 0.99999, n_angles)
    vals = np.array([stack_reflectance(stack, a, "unpolarized") for a in grid])
    return lambda theta: np.interp(theta, grid, vals)


def collection_efficiency(
    geometry: DetectorGeometry,
    include_arc: bool = True,
    warn_on_shadowing: bool = True,
) -> float:
    """Fraction of emitted photons collected by the weighted active area.

    Sums weight * cos(theta) / (4 pi r^2) * cell_area * (1 - R(theta)) over
    cells; the dipole_perpendicular pattern multiplies in (3/2) sin^2(theta).
    """
    amap = geometry.active_area
    if amap.effective_area() <= 0:
        raise ValueError("active area map has zero effective area")
    cx, cy = amap.centroid()
    ion_x = cx + geometry.ion_lateral_offset
    ion_y = cy
    d = geometry.vertical_distance
    xx, yy = amap.cell_centers()
    dx = xx - ion_x
    dy = yy - ion_y
    r2 = dx * dx + dy * dy + d * d
    cos_t = d / np.sqrt(r2)
    theta = np.arccos(np.clip(cos_t, -1.0, 1.0))

    frac = amap.weights * cos_t / (4.0 * np.pi * r2) * amap.cell_size**2
    if geometry.emission_pattern == "dipole_perpendicular":
        frac = frac * 1.5 * np.sin(theta) ** 2
    if include_arc:
        frac = frac * (1.0 - _reflectance_interpolator(geometry.stack)(theta))

    if warn_on_shadowing and _any_cell_shadowed(geometry, xx, yy, ion_x, ion_y):
        warnings.warn(
            "line of sight from part of the active area to the ion clips the "
            "aperture wall; wall occlusion is not modeled",
            ShadowingWarning,
            stacklevel=2,
        )
    return float(frac.sum())


def _any_cell_shadowed(geometry, xx, yy, ion_x, ion_y) -> bool:
    """True if any weighted cell's ray to the ion leaves the aperture through its wall."""
    recess = geometry.detector_recess_below_surface
    if recess <= 0:
        return False
    frac = recess / geometry.vertical_distance  # ray parameter at the trap surface
    sx = xx + (ion_x - xx) * frac
    sy = yy + (ion_y - yy) * frac
    outside = np.hypot(sx, sy) > geometry.aperture_diameter / 2
    return bool(np.any(outside & (geometry.active_area.weights > 0)))


def efficiency_vs_offset(geometry: DetectorGeometry, offsets, **kwargs) -> list[tuple[float, float]]:
    """collection_efficiency evaluated at each lateral offset, input order kept."""
    offsets = list(offsets)
    if not offsets:
        raise ValueError("offsets must be non-empty")
    return [
        (off, collection_efficiency(geometry.with_offset(off), **kwargs))
        for off in offsets
    ]
