"""Source x detector spectra S_i(E) on a shared energy grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, TextIO

import numpy as np
from scipy.interpolate import CubicSpline

from .atten_data import ALUMINUM_DENSITY, AttenuationTable, bundled_table, mass_attenuation
from .errors import DomainError, EmptySpectrum, MalformedSpectrum, ShapeError

HEADER = ("energy_keV", "weight")
DEFAULT_FILTRATION_MM_AL = 2.5
TUBE_POTENTIAL_RANGE = (40.0, 150.0)


@dataclass(frozen=True, eq=False)
class EnergyGrid:
    energies: np.ndarray

    def __post_init__(self):
        e = np.array(self.energies, dtype=float)
        if e.ndim != 1 or e.size < 2:
            raise ShapeError("an energy grid needs at least 2 nodes")
        if np.any(np.diff(e) <= 0):
            raise ShapeError("grid energies must be strictly increasing")
        e.setflags(write=False)
        object.__setattr__(self, "energies", e)

    @classmethod
    def uniform(cls, lo: float = 10.0, hi: float = 150.0, step: float = 1.0) -> "EnergyGrid":
        count = int(round((hi - lo) / step)) + 1
        return cls(np.linspace(lo, hi, count))

    def __len__(self):
        return self.energies.size

    def __eq__(self, other):
        return isinstance(other, EnergyGrid) and np.array_equal(self.energies, other.energies)

    def __hash__(self):
        return hash(self.energies.tobytes())

    @property
    def lo(self) -> float:
        return float(self.energies[0])

    @property
    def hi(self) -> float:
        return float(self.energies[-1])


def default_grid() -> EnergyGrid:
    return EnergyGrid.uniform(10.0, 150.0, 1.0)


def trapezoid_weights(energies: np.ndarray) -> np.ndarray:
    """Node weights w with sum(w * f) equal to the composite trapezoid rule."""
    h = np.diff(energies)
    w = np.zeros_like(energies)
    w[:-1] += h / 2
    w[1:] += h / 2
    return w


def quadrature(grid: EnergyGrid, values) -> float:
    """Composite trapezoid rule of ``values`` over the grid nodes."""
    v = np.asarray(values, dtype=float)
    if v.shape != grid.energies.shape:
        raise ShapeError(f"expected {len(grid)} values, got shape {v.shape}")
    return float(trapezoid_weights(grid.energies) @ v)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Normalized weights of one source/detector pair.

    ``tube_potential`` is an optional kVp tag; when set, weights above it
    must vanish.
    """

    grid: EnergyGrid
    weights: np.ndarray
    tube_potential: Optional[float] = None
    label: str = field(default="")
    interpolation: str = "linear"

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != self.grid.energies.shape:
            raise ShapeError(f"expected {len(self.grid)} weights, got shape {w.shape}")
        if np.any(~np.isfinite(w)) or np.any(w < 0):
            raise MalformedSpectrum("weights must be finite and nonnegative")
        if not np.any(w > 0):
            raise EmptySpectrum("all weights are zero")
        if self.interpolation not in ("linear", "spline"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.tube_potential is not None and np.any(w[self.grid.energies > self.tube_potential] > 0):
            raise MalformedSpectrum("nonzero weight above the tube potential")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def energies(self) -> np.ndarray:
        return self.grid.energies

    def total(self) -> float:
        return quadrature(self.grid, self.weights)

    def mean_energy(self) -> float:
        return quadrature(self.grid, self.weights * self.energies) / self.total()

    def values_at(self, energies) -> np.ndarray:
        """Evaluate the continuous spectrum between grid nodes.

        ``linear`` connects node values; ``spline`` fits a cubic spline over
        the support (first to last positive node, padded by one zero node
        on each side), clips it at zero and vanishes outside.
        """
        e = np.asarray(energies, dtype=float)
        if self.interpolation == "linear":
            return np.interp(e, self.energies, self.weights, left=0.0, right=0.0)
        pos = np.nonzero(self.weights > 0)[0]
        lo = max(pos[0] - 1, 0)
        hi = min(pos[-1] + 1, len(self.weights) - 1)
        if hi - lo < 3:
            return np.interp(e, self.energies, self.weights, left=0.0, right=0.0)
        knots = self.energies[lo:hi + 1]
        spline = CubicSpline(knots, self.weights[lo:hi + 1])
        inside = (e >= knots[0]) & (e <= knots[-1])
        out = np.zeros_like(e)
        out[inside] = np.clip(spline(e[inside]), 0.0, None)
        return out


def normalize(s: Spectrum) -> Spectrum:
    total = quadrature(s.grid, s.weights)
    if not total > 0:
        raise EmptySpectrum("zero total weight")
    out = Spectrum(s.grid, s.weights / total, s.tube_potential, s.label, s.interpolation)
    # one correction pass pulls the trapezoid sum to within an ulp or two of 1
    total = quadrature(out.grid, out.weights)
    if total != 1.0:
        out = Spectrum(out.grid, out.weights / total, s.tube_potential, s.label, s.interpolation)
    return out


def kramers_shape(tube_potential: float, filtration_mm_al: float, energies,
                  al_table: AttenuationTable | None = None) -> np.ndarray:
    """Unnormalized filtered Kramers bremsstrahlung shape.

    w(E) = max(tp/E - 1, 0) * exp(-mu_Al(E) * rho_Al * t), t in cm.
    """
    e = np.asarray(energies, dtype=float)
    shape = np.maximum(tube_potential / e - 1.0, 0.0)
    if filtration_mm_al > 0:
        al = al_table if al_table is not None else bundled_table("aluminum")
        thickness_cm = filtration_mm_al / 10.0
        shape = shape * np.exp(-mass_attenuation(al, e) * ALUMINUM_DENSITY * thickness_cm)
    return shape


def kramers_spectrum(tube_potential: float, filtration_mm_al: float = DEFAULT_FILTRATION_MM_AL,
                     grid: EnergyGrid | None = None,
                     al_table: AttenuationTable | None = None) -> Spectrum:
    grid = grid if grid is not None else default_grid()
    if tube_potential <= grid.lo:
        raise EmptySpectrum(f"tube potential {tube_potential} kVp is below the grid minimum {grid.lo} keV")
    lo, hi = TUBE_POTENTIAL_RANGE
    if not lo <= tube_potential <= hi:
        raise DomainError(f"tube potential {tube_potential} outside [{lo:g}, {hi:g}] kVp")
    if filtration_mm_al < 0:
        raise DomainError("filtration must be >= 0")
    w = kramers_shape(tube_potential, filtration_mm_al, grid.energies, al_table)
    return normalize(Spectrum(grid, w, float(tube_potential), f"kramers {tube_potential:g} kVp", "spline"))


def load_spectrum(source: TextIO | str | Path, grid: EnergyGrid | None = None,
                  interpolation: str = "linear") -> Spectrum:
    """Read ``energy_keV,weight`` pairs and resample them onto ``grid``.

    Resampling is linear interpolation, zero outside the given support.
    """
    grid = grid if grid is not None else default_grid()
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return load_spectrum(fh, grid, interpolation)
    rows = list(csv.reader(source))
    if not rows or tuple(c.strip() for c in rows[0]) != HEADER:
        raise MalformedSpectrum(f"expected header {','.join(HEADER)}")
    pairs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            pairs.append((float(row[0]), float(row[1])))
        except (ValueError, IndexError):
            raise MalformedSpectrum(f"line {lineno}: expected two numbers") from None
    if len(pairs) < 2:
        raise MalformedSpectrum("need at least two (energy, weight) pairs to interpolate")
    arr = np.array(pairs)
    e, w = arr[:, 0], arr[:, 1]
    if np.any(np.diff(e) <= 0):
        raise MalformedSpectrum("energies must be strictly increasing")
    if np.any(w < 0):
        raise MalformedSpectrum("negative weight")
    resampled = np.interp(grid.energies, e, w, left=0.0, right=0.0)
    if not np.any(resampled > 0):
        raise EmptySpectrum("spectrum has no weight on the grid")
    return normalize(Spectrum(grid, resampled, interpolation=interpolation, label="file"))


def dump_spectrum(s: Spectrum) -> str:
    lines = [",".join(HEADER)]
    lines += [f"{e!r},{w!r}" for e, w in zip(s.energies.tolist(), s.weights.tolist())]
    return "\n".join(lines) + "\n"
