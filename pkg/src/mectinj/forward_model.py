"""The ME-CT transform I(x) = -ln int S_i(E) exp(-M(E).x) dE and its Jacobian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .atten_data import MaterialSet, mass_attenuation
from .errors import DomainError, OutOfRange, ShapeError
from .spectra import Spectrum, trapezoid_weights


PANEL_SUBDIVISIONS = 8


@dataclass(frozen=True, eq=False)
class MectSetup:
    """n spectra and m materials sharing one energy grid.

    Integration nodes: the spectrum grid plus every tabulated material
    energy inside it (so absorption edges sit on nodes), each panel then
    split into ``subdivisions`` equal pieces. Spectra are evaluated between
    grid nodes with their own interpolant, attenuation with the log-log
    table rule. The integrals are divided by the same-rule integral of each
    spectrum, so I(0) = 0 holds exactly.
    """

    spectra: tuple[Spectrum, ...]
    materials: MaterialSet
    subdivisions: int = PANEL_SUBDIVISIONS

    def __post_init__(self):
        spectra = tuple(self.spectra)
        materials = self.materials
        if not isinstance(materials, MaterialSet):
            materials = MaterialSet(tuple(materials))
        if not spectra:
            raise ShapeError("need at least one spectrum")
        grid = spectra[0].grid
        if any(s.grid != grid for s in spectra[1:]):
            raise ShapeError("all spectra must share one energy grid")
        n, m = len(spectra), len(materials)
        if n < m:
            raise ShapeError(f"need n >= m, got n={n} spectra and m={m} materials")
        for t in materials:
            if t.e_min > grid.lo or t.e_max < grid.hi:
                raise OutOfRange(
                    f"{t.material_name} table [{t.e_min}, {t.e_max}] keV does not cover "
                    f"grid [{grid.lo}, {grid.hi}] keV"
                )
        if self.subdivisions < 1:
            raise ShapeError("subdivisions must be >= 1")
        extra = [t.energies[(t.energies > grid.lo) & (t.energies < grid.hi)] for t in materials]
        breaks = np.unique(np.concatenate([grid.energies, *extra]))
        r = self.subdivisions
        frac = np.arange(r) / r
        nodes = np.append((breaks[:-1, None] + np.diff(breaks)[:, None] * frac).ravel(), breaks[-1])
        weights = np.stack([s.values_at(nodes) for s in spectra])
        weights *= trapezoid_weights(nodes)
        weights /= weights.sum(axis=1, keepdims=True)
        basis = np.stack([mass_attenuation(t, nodes) for t in materials], axis=1)
        if np.any(basis < 0):
            raise ShapeError("attenuation basis must be nonnegative")
        object.__setattr__(self, "spectra", spectra)
        object.__setattr__(self, "materials", materials)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "basis", basis)  # (K, m): B[e, j] = M_j(E_e)
        # (n, K): S_i(E_e) times trapezoid weight of node e, rows summing to 1
        object.__setattr__(self, "_sw", weights)

    @property
    def n(self) -> int:
        return len(self.spectra)

    @property
    def m(self) -> int:
        return len(self.materials)

    @property
    def grid(self):
        return self.spectra[0].grid

    @property
    def is_square(self) -> bool:
        return self.n == self.m

    def subsystem(self, rows: Sequence[int]) -> "MectSetup":
        """Setup using only the spectra at 0-based positions ``rows``."""
        return MectSetup(tuple(self.spectra[r] for r in rows), self.materials, self.subdivisions)


def _as_points(setup: MectSetup, x) -> tuple[np.ndarray, bool]:
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[-1] != setup.m:
        raise ShapeError(f"expected {setup.m} line integrals, got shape {np.shape(x)}")
    if np.any(pts < 0) or np.any(np.isnan(pts)):
        raise DomainError("line integrals must be nonnegative")
    return pts, single


def _evaluate(setup: MectSetup, pts: np.ndarray, want_jacobian: bool):
    att = np.exp(-pts @ setup.basis.T)  # (N, K), computed once per node
    trans = att @ setup._sw.T  # (N, n)
    # rows of _sw sum to 1 only up to rounding; pin I(0) = 0 and I >= 0
    values = np.maximum(-np.log(trans), 0.0)
    values[~pts.any(axis=1)] = 0.0
    if not want_jacobian:
        return values, None
    jac = np.empty((pts.shape[0], setup.n, setup.m))
    for i in range(setup.n):
        jac[:, i, :] = (att * setup._sw[i]) @ setup.basis
    jac /= trans[:, :, None]
    return values, jac


def transform(setup: MectSetup, x) -> np.ndarray:
    """I(x) for one point (shape (m,)) or a batch (shape (N, m))."""
    pts, single = _as_points(setup, x)
    values, _ = _evaluate(setup, pts, False)
    return values[0] if single else values


def jacobian(setup: MectSetup, x) -> np.ndarray:
    """J(x), shape (n, m) for one point or (N, n, m) for a batch."""
    pts, single = _as_points(setup, x)
    _, jac = _evaluate(setup, pts, True)
    return jac[0] if single else jac


def transform_and_jacobian(setup: MectSetup, x):
    pts, single = _as_points(setup, x)
    values, jac = _evaluate(setup, pts, True)
    if single:
        return values[0], jac[0]
    return values, jac


class SetupMap:
    """x -> A I(x) as a map object (A = identity when omitted).

    The map interface used by inversion and redundant: ``dim``,
    ``value(x)``, ``jacobian(x)``, ``value_and_jacobian(x)``; all accept a
    single point or a batch.
    """

    def __init__(self, setup: MectSetup, A=None):
        self.setup = setup
        self.A = None if A is None else np.asarray(A, dtype=float)
        if self.A is not None and self.A.shape != (setup.n, setup.n):
            raise ShapeError(f"transform must be {setup.n}x{setup.n}")
        self.dim = setup.m
        self.out_dim = setup.n

    def value_and_jacobian(self, x):
        v, J = transform_and_jacobian(self.setup, x)
        if self.A is not None:
            v = v @ self.A.T
            J = self.A @ J
        return v, J

    def value(self, x):
        v = transform(self.setup, x)
        return v if self.A is None else v @ self.A.T

    def jacobian(self, x):
        J = jacobian(self.setup, x)
        return J if self.A is None else self.A @ J

    def jacobian_field(self, points, cell=None):
        return np.atleast_3d(self.jacobian(np.atleast_2d(points)))


def as_map(obj, A=None):
    """Wrap a MectSetup (optionally with a transform) or pass a map through."""
    if isinstance(obj, MectSetup):
        return SetupMap(obj, A)
    if A is not None:
        raise ShapeError("a transform can only be attached to a MectSetup")
    return obj
