"""Tabulated mass attenuation coefficients and log-log interpolation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np

from .errors import MalformedTable, OutOfRange

HEADER = ("energy_keV", "mass_attenuation_cm2_g")
BUNDLED = ("water", "bone", "iodine", "gadolinium", "aluminum")
ALUMINUM_DENSITY = 2.699  # g/cm^3


@dataclass(frozen=True)
class AttenuationTable:
    """Mass attenuation M(E) of one material.

    Attributes:
        material_name: Material label.
        energies: Sample energies in keV, strictly increasing.
        values: Mass attenuation in cm^2/g at each sample energy.
    """

    material_name: str
    energies: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or e.shape != v.shape:
            raise MalformedTable("energies and values must be 1-D of equal length")
        if e.size < 2:
            raise MalformedTable(f"{self.material_name}: need at least 2 samples")
        if not np.all(np.isfinite(e)) or not np.all(np.isfinite(v)):
            raise MalformedTable(f"{self.material_name}: non-finite sample")
        if np.any(e <= 0) or np.any(v <= 0):
            raise MalformedTable(f"{self.material_name}: energies and values must be > 0")
        if np.any(np.diff(e) <= 0):
            raise MalformedTable(f"{self.material_name}: energies not strictly increasing")
        e.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "values", v)

    @property
    def e_min(self) -> float:
        return float(self.energies[0])

    @property
    def e_max(self) -> float:
        return float(self.energies[-1])

    def __call__(self, energy):
        return mass_attenuation(self, energy)


@dataclass(frozen=True)
class MaterialSet:
    materials: tuple[AttenuationTable, ...]

    def __post_init__(self):
        mats = tuple(self.materials)
        if not mats:
            raise MalformedTable("a material set needs at least one material")
        names = [t.material_name for t in mats]
        if len(set(names)) != len(names):
            raise MalformedTable(f"duplicate material names: {names}")
        object.__setattr__(self, "materials", mats)

    def __len__(self):
        return len(self.materials)

    def __iter__(self):
        return iter(self.materials)

    def __getitem__(self, i):
        return self.materials[i]

    @property
    def names(self) -> list[str]:
        return [t.material_name for t in self.materials]


def load_material_table(source: TextIO | str | Path, name: str | None = None) -> AttenuationTable:
    """Read a two-column CSV table (``energy_keV,mass_attenuation_cm2_g``).

    ``source`` may be an open text stream or a path. Raises MalformedTable
    for anything that does not satisfy the table invariants.
    """
    if isinstance(source, (str, Path)):
        path = Path(source)
        name = name or path.stem
        with open(path, encoding="utf-8", newline="") as fh:
            return load_material_table(fh, name)
    rows = list(csv.reader(source))
    if not rows:
        raise MalformedTable("empty table")
    header = tuple(c.strip() for c in rows[0])
    if header != HEADER:
        raise MalformedTable(f"bad header {rows[0]!r}, expected {','.join(HEADER)}")
    energies, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise MalformedTable(f"line {lineno}: expected 2 columns")
        try:
            energies.append(float(row[0]))
            values.append(float(row[1]))
        except ValueError as exc:
            raise MalformedTable(f"line {lineno}: {exc}") from None
    return AttenuationTable(name or "material", np.array(energies), np.array(values))


def table_from_rows(name: str, rows: Iterable[Sequence[float]]) -> AttenuationTable:
    rows = list(rows)
    if len(rows) < 2:
        raise MalformedTable(f"{name}: need at least 2 samples")
    arr = np.asarray(rows, dtype=float)
    return AttenuationTable(name, arr[:, 0], arr[:, 1])


def dump_material_table(table: AttenuationTable) -> str:
    # repr() round-trips doubles exactly
    lines = [",".join(HEADER)]
    lines += [f"{e!r},{v!r}" for e, v in zip(table.energies.tolist(), table.values.tolist())]
    return "\n".join(lines) + "\n"


def bundled_table(name: str) -> AttenuationTable:
    if name not in BUNDLED:
        raise KeyError(f"no bundled table {name!r}; available: {', '.join(BUNDLED)}")
    text = resources.files("mectinj.data").joinpath(f"{name}.csv").read_text(encoding="utf-8")
    return load_material_table(io.StringIO(text), name)


def resolve_material(spec: str) -> AttenuationTable:
    """Bundled material name or path to a CSV table."""
    if spec in BUNDLED:
        return bundled_table(spec)
    return load_material_table(Path(spec))


def mass_attenuation(table: AttenuationTable, energy):
    """Interpolate M(E) linearly in (ln E, ln M).

    Accepts a scalar or array of energies; returns the same shape. No
    extrapolation: energies outside the tabulated range raise OutOfRange.
    """
    e = np.asarray(energy, dtype=float)
    if np.any(e < table.e_min) or np.any(e > table.e_max) or np.any(np.isnan(e)):
        raise OutOfRange(
            f"{table.material_name}: energy outside tabulated range "
            f"[{table.e_min}, {table.e_max}] keV"
        )
    log_e = np.log(table.energies)
    log_v = np.log(table.values)
    out = np.exp(np.interp(np.log(e), log_e, log_v))
    # hit tabulated points exactly
    idx = np.searchsorted(table.energies, e)
    idx = np.clip(idx, 0, table.energies.size - 1)
    exact = table.energies[idx] == e
    out = np.where(exact, table.values[idx], out)
    if out.ndim == 0:
        return float(out)
    return out
