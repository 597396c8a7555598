"""Grid certification of Jacobian minors over a rectangle of line integrals.

Everything here is a *grid certificate*: conditions are checked at the
visited nodes (a regular grid plus local refinement around each minor's
minimum), not proven for every point of the rectangle.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.stats import binomtest

from . import pmatrix
from .atten_data import MaterialSet, mass_attenuation
from .errors import DomainError, ShapeError
from .forward_model import MectSetup, jacobian
from .spectra import DEFAULT_FILTRATION_MM_AL, EnergyGrid, default_grid, kramers_spectrum

CHUNK = 4096
REFINE_NODES = 5  # per axis: half the parent spacing across [argmin - h, argmin + h]
CHECKS = ("det_vanishes", "p_everywhere", "pqd_everywhere", "sdd_everywhere")


@dataclass(frozen=True)
class Rectangle:
    lower: np.ndarray
    upper: np.ndarray

    orthant = True  # class-level: line integrals are nonnegative

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float)
        hi = np.array(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ShapeError("lower and upper must be vectors of equal length")
        if self.orthant and np.any(lo < 0):
            raise DomainError("rectangle must lie in the nonnegative orthant")
        if np.any(lo > hi):
            raise DomainError("lower must not exceed upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return (self.lower + self.upper) / 2

    def contains(self, x, slack: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        return np.all((x >= self.lower - slack) & (x <= self.upper + slack), axis=-1)

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        return self.lower + rng.random((count, self.dim)) * (self.upper - self.lower)

    def split(self, parts: int) -> list["Rectangle"]:
        """Regular partition into parts**dim sub-rectangles, C order."""
        edges = [np.linspace(l, u, parts + 1) for l, u in zip(self.lower, self.upper)]
        out = []
        for idx in itertools.product(range(parts), repeat=self.dim):
            lo = [edges[a][i] for a, i in enumerate(idx)]
            hi = [edges[a][i + 1] for a, i in enumerate(idx)]
            out.append(type(self)(lo, hi))
        return out

    def to_dict(self) -> dict:
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


class Box(Rectangle):
    """Axis-aligned box anywhere in R^m, e.g. the image of a rectangle
    under a diagonal sign flip."""

    orthant = False


@dataclass(frozen=True)
class ScanGrid:
    nodes_per_axis: int = 11
    refinement_levels: int = 2

    def __post_init__(self):
        if self.nodes_per_axis < 2:
            raise DomainError("nodes_per_axis must be >= 2")
        if self.refinement_levels < 0:
            raise DomainError("refinement_levels must be >= 0")

    def to_dict(self) -> dict:
        return {"nodes_per_axis": self.nodes_per_axis, "refinement_levels": self.refinement_levels}


def grid_points(rect: Rectangle, nodes_per_axis: int) -> np.ndarray:
    axes = [np.linspace(l, u, nodes_per_axis) for l, u in zip(rect.lower, rect.upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, rect.dim)


def refine_box(rect: Rectangle, center: np.ndarray, half_width: np.ndarray) -> np.ndarray:
    lo = np.maximum(center - half_width, rect.lower)
    hi = np.minimum(center + half_width, rect.upper)
    return grid_points(type(rect)(lo, hi), REFINE_NODES)


def default_rectangle(setup: MectSetup) -> Rectangle:
    """0 <= x_j <= 10 / max_E M_j(E), the max taken over the grid nodes.

    Then exp(-M(E)_j x_j) >= exp(-10) for each material.
    """
    energies = setup.grid.energies
    peak = np.array([np.max(mass_attenuation(t, energies)) for t in setup.materials])
    return Rectangle(np.zeros(setup.m), 10.0 / peak)


def setup_jacobian_fn(setup: MectSetup, transform_A=None) -> Callable[[np.ndarray], np.ndarray]:
    """x (N, m) -> A J(x) (N, n, n), evaluated in chunks."""
    if setup.n != setup.m:
        raise ShapeError(f"n != m: square Jacobian required, got n={setup.n}, m={setup.m}")
    A = None if transform_A is None else np.asarray(transform_A, dtype=float)
    if A is not None and A.shape != (setup.n, setup.n):
        raise ShapeError(f"transform must be {setup.n}x{setup.n}, got {A.shape}")

    def fn(points: np.ndarray) -> np.ndarray:
        out = np.empty((points.shape[0], setup.n, setup.n))
        for start in range(0, points.shape[0], CHUNK):
            J = jacobian(setup, points[start:start + CHUNK])
            out[start:start + CHUNK] = J if A is None else A @ J
        return out

    return fn


@dataclass
class MinorExtrema:
    deleted: tuple
    min: float = math.inf
    max: float = -math.inf
    argmin: Optional[np.ndarray] = None
    argmax: Optional[np.ndarray] = None

    def to_dict(self) -> dict:
        return {
            "deleted": list(self.deleted),
            "label": pmatrix.label(self.deleted),
            "min": self.min,
            "max": self.max,
            "argmin": self.argmin.tolist(),
            "argmax": self.argmax.tolist(),
        }


@dataclass
class ScanReport:
    """Per-minor extrema over the visited nodes plus classification flags."""

    minors: list[MinorExtrema]
    det_vanishes: bool
    det_sign_changes: bool
    p_everywhere: bool
    pqd_everywhere: bool
    sdd_everywhere: bool
    boundary_p: Optional[bool]
    rect: Rectangle
    grid: ScanGrid
    points_evaluated: int
    transformed: bool = False
    p_fail_point: Optional[np.ndarray] = None

    def minor(self, deleted: Sequence[int]) -> MinorExtrema:
        key = tuple(deleted)
        for row in self.minors:
            if row.deleted == key:
                return row
        raise KeyError(key)

    @property
    def det(self) -> MinorExtrema:
        return self.minor(())

    def flags(self) -> dict:
        return {
            "det_vanishes": self.det_vanishes,
            "det_sign_changes": self.det_sign_changes,
            "p_everywhere": self.p_everywhere,
            "pqd_everywhere": self.pqd_everywhere,
            "sdd_everywhere": self.sdd_everywhere,
            "boundary_p": self.boundary_p,
        }

    def to_dict(self) -> dict:
        return {
            "minors": [row.to_dict() for row in self.minors],
            "flags": self.flags(),
            "grid": {
                "kind": "grid certificate",
                **self.grid.to_dict(),
                **self.rect.to_dict(),
                "points_evaluated": self.points_evaluated,
                "transformed": self.transformed,
            },
        }

    def table(self, title: str = "") -> str:
        """Plain-text min/max table, one row per principal minor."""
        lines = [title] if title else []
        lines.append(f"{'minor':<12}{'min':>14}{'max':>14}")
        for row in self.minors:
            lines.append(f"{pmatrix.label(row.deleted):<12}{row.min:>14.6g}{row.max:>14.6g}")
        return "\n".join(lines)


class _Accumulator:
    def __init__(self, n: int):
        self.order = pmatrix.report_order(n)
        self.rows = [MinorExtrema(d) for d in self.order]
        self.sizes = np.array([n - len(d) for d in self.order])
        self.count = 0
        self.all_p = True
        self.all_pqd = True
        self.all_sdd = True
        self.det_pos = False
        self.det_neg = False
        self.det_small = False
        self.p_fail_point = None

    def add(self, points: np.ndarray, mats: np.ndarray) -> None:
        minors = pmatrix.principal_minors_batch(mats, self.order)
        scale = np.abs(mats).max(axis=(1, 2))
        thr = pmatrix.REL_TOL * scale[:, None] ** self.sizes[None, :]
        passed = minors > thr
        for col, row in enumerate(self.rows):
            i, j = int(np.argmin(minors[:, col])), int(np.argmax(minors[:, col]))
            if minors[i, col] < row.min:
                row.min, row.argmin = float(minors[i, col]), points[i].copy()
            if minors[j, col] > row.max:
                row.max, row.argmax = float(minors[j, col]), points[j].copy()
        point_ok = passed.all(axis=1)
        if self.all_p and not point_ok.all():
            self.p_fail_point = points[int(np.argmin(point_ok))].copy()
        self.all_p &= bool(point_ok.all())
        self.all_pqd &= bool(pmatrix.is_pqd_batch(mats).all())
        self.all_sdd &= bool(pmatrix.is_sdd_batch(mats).all())
        det, det_thr = minors[:, 0], thr[:, 0]
        self.det_pos |= bool(np.any(det > det_thr))
        self.det_neg |= bool(np.any(det < -det_thr))
        self.det_small |= bool(np.any(np.abs(det) <= det_thr))
        self.count += points.shape[0]


def scan_field(jac_fn: Callable[[np.ndarray], np.ndarray], rect: Rectangle, grid: ScanGrid,
               transformed: bool = False) -> ScanReport:
    """Scan any square Jacobian field ``jac_fn: (N, m) -> (N, m, m)``."""
    points = grid_points(rect, grid.nodes_per_axis)
    mats = jac_fn(points)
    acc = _Accumulator(mats.shape[1])
    acc.add(points, mats)
    half = (rect.upper - rect.lower) / (grid.nodes_per_axis - 1)
    for _ in range(grid.refinement_levels):
        centers = {tuple(row.argmin) for row in acc.rows}
        boxes = [refine_box(rect, np.array(c), half) for c in sorted(centers)]
        pts = np.unique(np.concatenate(boxes), axis=0)
        acc.add(pts, jac_fn(pts))
        half = half / 2
    sign_change = acc.det_pos and acc.det_neg
    return ScanReport(
        minors=acc.rows,
        det_vanishes=sign_change or acc.det_small,
        det_sign_changes=sign_change,
        p_everywhere=acc.all_p,
        pqd_everywhere=acc.all_pqd,
        sdd_everywhere=acc.all_sdd,
        boundary_p=None,
        rect=rect,
        grid=grid,
        points_evaluated=acc.count,
        transformed=transformed,
        p_fail_point=acc.p_fail_point,
    )


def scan(setup: MectSetup, rect: Rectangle | None = None, grid: ScanGrid | None = None,
         transform_A=None) -> ScanReport:
    """Extrema of every principal minor of A J(x) over the rectangle."""
    rect = rect if rect is not None else default_rectangle(setup)
    grid = grid if grid is not None else ScanGrid()
    fn = setup_jacobian_fn(setup, transform_A)
    return scan_field(fn, rect, grid, transformed=transform_A is not None)


def boundary_points(rect: Rectangle, nodes_per_axis: int) -> np.ndarray:
    pts = grid_points(rect, nodes_per_axis)
    on_face = np.any(np.isclose(pts, rect.lower) | np.isclose(pts, rect.upper), axis=1)
    return pts[on_face]


def boundary_scan_field(jac_fn, rect: Rectangle, grid: ScanGrid, transformed: bool = False) -> ScanReport:
    """Boundary variant: det > 0 on the whole grid, P-matrix only on the faces."""
    report = scan_field(jac_fn, rect, grid, transformed)
    det_positive = report.det.min > 0 and not report.det_vanishes
    faces = boundary_points(rect, grid.nodes_per_axis)
    faces_p = bool(pmatrix.is_p_batch(jac_fn(faces)).all())
    report.boundary_p = bool(det_positive and faces_p)
    return report


def boundary_scan(setup: MectSetup, rect: Rectangle | None = None, grid: ScanGrid | None = None,
                  transform_A=None) -> ScanReport:
    rect = rect if rect is not None else default_rectangle(setup)
    grid = grid if grid is not None else ScanGrid()
    fn = setup_jacobian_fn(setup, transform_A)
    return boundary_scan_field(fn, rect, grid, transformed=transform_A is not None)


# --- tube potential sweeps -------------------------------------------------

@dataclass
class SweepResult:
    rows: list[tuple[tuple[int, ...], bool]]
    check: str
    sampling: str

    @property
    def hits(self) -> int:
        return sum(flag for _, flag in self.rows)

    def fraction(self) -> float:
        return self.hits / len(self.rows) if self.rows else float("nan")

    def wilson_interval(self) -> tuple[float, float]:
        ci = binomtest(self.hits, len(self.rows)).proportion_ci(0.95, method="wilson")
        return float(ci.low), float(ci.high)

    def to_csv(self) -> str:
        n = len(self.rows[0][0]) if self.rows else 0
        lines = [",".join([f"tp_{i + 1}" for i in range(n)] + [self.check])]
        lines += [",".join([*map(str, tp), str(int(flag))]) for tp, flag in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lo, hi = self.wilson_interval()
        return (f"{self.check}: {self.hits}/{len(self.rows)} = {self.fraction():.4f} "
                f"(Wilson 95% [{lo:.4f}, {hi:.4f}])")


def exhaustive_pairs(tp_range: tuple[int, int]) -> list[tuple[int, int]]:
    lo, hi = tp_range
    return [(a, b) for a in range(lo, hi + 1) for b in range(a, hi + 1)]


def random_tuples(tp_range: tuple[int, int], n: int, count: int, seed: int) -> list[tuple[int, ...]]:
    """Distinct nondecreasing integer tuples, uniform over draws, fixed by seed."""
    lo, hi = tp_range
    total = math.comb(hi - lo + n, n)  # multisets of size n
    if count > total:
        raise DomainError(f"only {total} distinct tuples exist, asked for {count}")
    rng = np.random.default_rng(seed)
    seen: dict[tuple[int, ...], None] = {}
    while len(seen) < count:
        tp = tuple(sorted(int(v) for v in rng.integers(lo, hi + 1, size=n)))
        seen.setdefault(tp, None)
    return list(seen)


def sweep_tube_potentials(materials: MaterialSet, tp_range: tuple[int, int] = (40, 150), n: int | None = None,
                          check: str = "det_vanishes", sampling: str = "exhaustive_pairs",
                          samples: int = 1000, seed: int = 0, grid: ScanGrid | None = None,
                          filtration_mm_al: float = DEFAULT_FILTRATION_MM_AL,
                          energy_grid: EnergyGrid | None = None, threads: int = 1,
                          tuples: Iterable[Sequence[int]] | None = None) -> SweepResult:
    """Build Kramers spectra per tube-potential tuple, scan, record ``check``."""
    n = len(materials) if n is None else n
    if check not in CHECKS:
        raise DomainError(f"unknown check {check!r}; choose from {CHECKS}")
    lo, hi = tp_range
    if lo > hi:
        raise DomainError("empty tube potential range")
    if lo < 40 or hi > 150:
        raise DomainError("tube potentials must lie in [40, 150] kVp")
    if tuples is not None:
        todo = [tuple(int(v) for v in t) for t in tuples]
    elif sampling == "exhaustive_pairs":
        if n != 2:
            raise DomainError("exhaustive_pairs sampling needs n = 2")
        todo = exhaustive_pairs(tp_range)
    elif sampling == "random":
        todo = random_tuples(tp_range, n, samples, seed)
    else:
        raise DomainError(f"unknown sampling {sampling!r}")
    if not todo:
        raise DomainError("nothing to sweep")
    egrid = energy_grid if energy_grid is not None else default_grid()
    grid = grid if grid is not None else ScanGrid()
    spectra = {tp: kramers_spectrum(tp, filtration_mm_al, egrid)
               for tp in sorted({v for t in todo for v in t})}
    rect = default_rectangle(MectSetup(tuple(spectra[t] for t in todo[0]), materials))

    def one(tp):
        setup = MectSetup(tuple(spectra[t] for t in tp), materials)
        return tp, bool(getattr(scan(setup, rect, grid), check))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(one, todo))
    else:
        rows = [one(tp) for tp in todo]
    return SweepResult(rows, check, sampling if tuples is None else "explicit")
