"""Overdetermined setups (n spectra > m materials): square subsystems,
P-family certificates over a rectangle cover, and the averaged map."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainError, ShapeError
from .forward_model import MectSetup, SetupMap
from .linmap_search import margin_field
from .rect_scan import Rectangle, ScanGrid, default_rectangle, scan_field

SubsystemIndex = tuple  # sorted 1-based measurement indices, length m


def enumerate_subsystems(n: int, m: int) -> list[SubsystemIndex]:
    """All C(n, m) choices of m measurements out of n, lexicographic."""
    if m < 1 or n < m:
        raise DomainError(f"need n >= m >= 1, got n={n}, m={m}")
    return list(itertools.combinations(range(1, n + 1), m))


def subsystem_map(setup: MectSetup, K: Sequence[int]) -> MectSetup:
    K = tuple(K)
    if len(K) != setup.m:
        raise DomainError(f"subsystem must pick m={setup.m} measurements, got {K}")
    if len(set(K)) != len(K) or any(not 1 <= k <= setup.n for k in K):
        raise DomainError(f"bad subsystem index {K} for n={setup.n}")
    return setup.subsystem([k - 1 for k in sorted(K)])


class PiecewiseMap1D:
    """Continuous piecewise-affine scalar map on [breakpoints[0], breakpoints[-1]].

    Derivatives at a breakpoint are one-sided; inside a cell the side
    pointing into the cell is used, so a closed cell sees only its own
    pieces.
    """

    def __init__(self, breakpoints, slopes, start_value: float = 0.0):
        b = np.asarray(breakpoints, dtype=float)
        s = np.asarray(slopes, dtype=float)
        if b.ndim != 1 or b.size < 2 or s.shape != (b.size - 1,):
            raise ShapeError("need k+1 breakpoints for k slopes")
        if np.any(np.diff(b) <= 0):
            raise ShapeError("breakpoints must increase")
        self.breakpoints, self.slopes = b, s
        self.knot_values = start_value + np.concatenate([[0.0], np.cumsum(s * np.diff(b))])
        self.dim = 1
        self.out_dim = 1

    @classmethod
    def staircase(cls, eps: float, lo: int, hi: int, steep_on_even: bool = True) -> "PiecewiseMap1D":
        """Slope 1 on [2k, 2k+1] and eps on [2k-1, 2k] (swapped if not steep_on_even)."""
        b = np.arange(lo, hi + 1, dtype=float)
        even = (b[:-1] % 2) == 0
        steep = even if steep_on_even else ~even
        return cls(b, np.where(steep, 1.0, eps), 0.0)

    def _scalar(self, x):
        x = np.asarray(x, dtype=float)
        return x[..., 0] if x.ndim >= 1 and x.shape[-1] == 1 else x

    def value(self, x):
        t = self._scalar(x)
        return np.interp(t, self.breakpoints, self.knot_values)[..., None]

    def derivative(self, t, side: str = "right"):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.breakpoints, t, side="right" if side == "right" else "left") - 1
        k = np.clip(k, 0, self.slopes.size - 1)
        return self.slopes[k]

    def jacobian(self, x):
        return self.derivative(self._scalar(x))[..., None, None]

    def value_and_jacobian(self, x):
        return self.value(x), self.jacobian(x)

    def jacobian_field(self, points, cell: Rectangle | None = None):
        t = np.asarray(points, dtype=float)[:, 0]
        d = self.derivative(t, "right")
        if cell is not None:
            at_top = t >= cell.upper[0]
            d = np.where(at_top, self.derivative(t, "left"), d)
        return d[:, None, None]


class AveragedMap:
    """x -> mean over the family of the subsystem maps."""

    def __init__(self, maps: Sequence):
        maps = list(maps)
        if not maps:
            raise DomainError("empty family")
        self.maps = maps
        self.dim = maps[0].dim
        self.out_dim = maps[0].out_dim

    def value(self, x):
        return sum(f.value(x) for f in self.maps) / len(self.maps)

    def jacobian(self, x):
        return sum(f.jacobian(x) for f in self.maps) / len(self.maps)

    def value_and_jacobian(self, x):
        return self.value(x), self.jacobian(x)

    def jacobian_field(self, points, cell=None):
        return sum(f.jacobian_field(points, cell) for f in self.maps) / len(self.maps)


def averaged_map(setup: MectSetup, family: Sequence[Sequence[int]]) -> AveragedMap:
    if not family:
        raise DomainError("empty family")
    return AveragedMap([SetupMap(subsystem_map(setup, K)) for K in family])


def family_lipschitz_bound(mu: float, mu0: float, family_size: int) -> float:
    """Effective constant (mu - mu0)/|K'| + mu0 of the averaged map."""
    if family_size < 1:
        raise DomainError("family size must be >= 1")
    if mu < mu0 or mu0 < 0:
        raise DomainError("need mu >= mu0 >= 0")
    return (mu - mu0) / family_size + mu0


@dataclass
class Assignment:
    alpha: int
    K: SubsystemIndex
    local_mu: float


@dataclass
class PFamilyCertificate:
    cover: list[Rectangle]
    assignments: list[Assignment]
    mu: float
    mu0: float
    used: list[SubsystemIndex]
    survivors: list[SubsystemIndex]
    global_mu: dict = field(default_factory=dict)
    grid: ScanGrid = field(default_factory=ScanGrid)
    rect: Optional[Rectangle] = None

    @property
    def bound(self) -> float:
        return family_lipschitz_bound(self.mu, self.mu0, len(self.used))

    def to_dict(self) -> dict:
        return {
            "found": True,
            "A": None,
            "mu": self.mu,
            "mu0": self.mu0,
            "bound": self.bound,
            "family": [list(K) for K in self.used],
            "subsystem_mu": [{"K": list(K), "mu": self.global_mu[K]} for K in self.survivors],
            "cover": [c.to_dict() for c in self.cover],
            "assignments": [{"alpha": a.alpha, "K": list(a.K), "local_mu": a.local_mu}
                            for a in self.assignments],
            "grid": {"kind": "grid certificate", **self.grid.to_dict(),
                     **(self.rect.to_dict() if self.rect is not None else {})},
        }


def certify_family(maps: dict, rect: Rectangle, grid: ScanGrid, cover_splits: int) -> Optional[PFamilyCertificate]:
    """P-family certificate for ``{K: map}`` with jacobian_field(points, cell).

    1. keep the K whose Jacobian is P at every node of the rectangle grid;
    2. split the rectangle into cover_splits**m cells;
    3. local margin of each surviving K on each cell, best K assigned;
    4. mu = min over cells of the assigned margin, mu0 = min over used K of
       its constant on the whole rectangle (min of its cell margins).
    Returns None when some cell has no subsystem with positive margin.
    """
    if cover_splits < 1:
        raise DomainError("cover_splits must be >= 1")
    survivors = []
    for K, f in maps.items():
        report = scan_field(lambda p, f=f: f.jacobian_field(p, rect), rect, grid)
        if report.p_everywhere:
            survivors.append(K)
    if not survivors:
        return None
    cover = rect.split(cover_splits)
    local: dict = {}
    for a, cell in enumerate(cover):
        for K in survivors:
            f = maps[K]
            local[a, K], _ = margin_field(lambda p, f=f, c=cell: f.jacobian_field(p, c), cell, grid)
    assignments = []
    for a in range(len(cover)):
        # ties go to the lexicographically first subsystem
        K = max(survivors, key=lambda K: (local[a, K], [-k for k in K]))
        if not local[a, K] > 0:
            return None
        assignments.append(Assignment(a, K, float(local[a, K])))
    global_mu = {K: float(min(local[a, K] for a in range(len(cover)))) for K in survivors}
    used = sorted({asg.K for asg in assignments})
    return PFamilyCertificate(
        cover=cover,
        assignments=assignments,
        mu=min(asg.local_mu for asg in assignments),
        mu0=min(global_mu[K] for K in used),
        used=used,
        survivors=survivors,
        global_mu=global_mu,
        grid=grid,
        rect=rect,
    )


def certify_p_family(setup: MectSetup, rect: Rectangle | None = None, grid: ScanGrid | None = None,
                     cover_splits: int = 2) -> Optional[PFamilyCertificate]:
    rect = rect if rect is not None else default_rectangle(setup)
    grid = grid if grid is not None else ScanGrid()
    maps = {K: SetupMap(subsystem_map(setup, K)) for K in enumerate_subsystems(setup.n, setup.m)}
    return certify_family(maps, rect, grid, cover_splits)
