"""Search for det-1 linear maps A that make A J(x) a P-matrix on a rectangle,
and the injectivity constant of a (transformed) setup."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import pmatrix
from .errors import DomainError, SearchExhausted, ShapeError
from .forward_model import MectSetup
from .rect_scan import (Rectangle, ScanGrid, ScanReport, default_rectangle, grid_points,
                        refine_box, scan_field, setup_jacobian_fn)

STRATEGIES = ("random", "adaptive")
BLOCK = 256
MAX_DRAWS = 100


@dataclass(frozen=True)
class TransformCandidate:
    A: np.ndarray
    det: float
    family: str  # "identity", "global_random", "adaptive_M<i>" or "adaptive_product"

    @classmethod
    def of(cls, A, family: str) -> "TransformCandidate":
        A = np.asarray(A, dtype=float)
        return cls(A, float(np.linalg.det(A)), family)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def normalize_det(A: np.ndarray) -> np.ndarray:
    """Swap the first two rows if det < 0, then scale to det 1."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    d = np.linalg.det(A)
    if d < 0:
        A[[0, 1]] = A[[1, 0]]
        d = -d
    A /= d ** (1.0 / n)
    d = np.linalg.det(A)
    if abs(d - 1) > 1e-12:
        A /= d ** (1.0 / n)
    return A


def random_unimodular(n: int, seed) -> TransformCandidate:
    """Standard normal entries, rescaled to det 1. ``seed`` may be a tuple."""
    if n < 2:
        raise DomainError("n must be >= 2")
    rng = _rng(seed)
    for _ in range(MAX_DRAWS):
        A = rng.standard_normal((n, n))
        if abs(np.linalg.det(A)) >= 1e-12:
            return TransformCandidate.of(normalize_det(A), "global_random")
    raise SearchExhausted(f"{MAX_DRAWS} singular draws in a row")


def adaptive_candidate(n: int, i: int, seed) -> TransformCandidate:
    """Random member of M_i: unit diagonal, free off-diagonal entries in column i only.

    i is 1-based. Minors of A J whose deleted set excludes i equal those of J;
    in particular [AJ]_{j} = [J]_{j} for j != i. det A = 1 by construction.
    """
    if not 1 <= i <= n:
        raise DomainError(f"target index {i} outside 1..{n}")
    rng = _rng(seed)
    A = np.eye(n)
    col = rng.standard_normal(n)
    col[i - 1] = 0.0
    A[:, i - 1] += col
    return TransformCandidate.of(A, f"adaptive_M{i}")


@dataclass
class InjectivityCertificate:
    A: Optional[np.ndarray]
    mu: float
    rect: Rectangle
    grid: ScanGrid
    argmin: Optional[np.ndarray] = None
    report: Optional[ScanReport] = None
    trials: int = 0
    strategy: str = ""
    seed: Optional[int] = None
    family: str = ""

    def to_dict(self) -> dict:
        n = self.rect.dim
        A = np.eye(n) if self.A is None else self.A
        return {
            "found": True,
            "A": A.tolist(),
            "mu": self.mu,
            "trials": self.trials,
            "strategy": self.strategy,
            "seed": self.seed,
            "family": self.family,
            "argmin": None if self.argmin is None else self.argmin.tolist(),
            "grid": {"kind": "grid certificate", **self.grid.to_dict(), **self.rect.to_dict()},
        }


def margin_field(jac_fn, rect: Rectangle, grid: ScanGrid) -> tuple[float, np.ndarray]:
    """min over visited nodes of p_matrix_margin, refined around the argmin."""
    pts = grid_points(rect, grid.nodes_per_axis)
    margins = pmatrix.p_matrix_margin_batch(jac_fn(pts))
    k = int(np.argmin(margins))
    best, where = float(margins[k]), pts[k].copy()
    half = (rect.upper - rect.lower) / (grid.nodes_per_axis - 1)
    for _ in range(grid.refinement_levels):
        if best <= 0:
            break
        pts = refine_box(rect, where, half)
        margins = pmatrix.p_matrix_margin_batch(jac_fn(pts))
        k = int(np.argmin(margins))
        if margins[k] < best:
            best, where = float(margins[k]), pts[k].copy()
        half = half / 2
    return best, where


def injectivity_constant(setup: MectSetup, rect: Rectangle | None = None, grid: ScanGrid | None = None,
                         A=None, with_report: bool = False):
    """Grid-certified injectivity constant of x -> A I(x).

    0 when A J(x) fails to be a P-matrix somewhere on the grid. With
    ``with_report`` returns (mu, argmin, ScanReport).
    """
    rect = rect if rect is not None else default_rectangle(setup)
    grid = grid if grid is not None else ScanGrid()
    fn = setup_jacobian_fn(setup, A)
    report = scan_field(fn, rect, grid, transformed=A is not None)
    if report.p_everywhere:
        mu, where = margin_field(fn, rect, grid)
    else:
        mu, where = 0.0, report.p_fail_point
    if with_report:
        return mu, where, report
    return mu


class _CandidateChecker:
    """Staged rejection: coarse 3^m nodes, then the cached scan grid, then a full scan."""

    def __init__(self, setup: MectSetup, rect: Rectangle, grid: ScanGrid):
        self.setup, self.rect, self.grid = setup, rect, grid
        fn = setup_jacobian_fn(setup)
        self.coarse = fn(grid_points(rect, 3))
        self.fine_points = grid_points(rect, grid.nodes_per_axis)
        self.fine = fn(self.fine_points)

    @staticmethod
    def _passes(As: np.ndarray, J: np.ndarray) -> np.ndarray:
        # As (T, n, n), J (P, n, n) -> (T,) all-P flags
        prod = np.einsum("tij,pjk->tpik", As, J)
        T, P, n, _ = prod.shape
        return pmatrix.is_p_batch(prod.reshape(T * P, n, n)).reshape(T, P).all(axis=1)

    def screen(self, As: np.ndarray) -> np.ndarray:
        ok = self._passes(As, self.coarse)
        idx = np.nonzero(ok)[0]
        if idx.size:
            ok[idx] = self._passes(As[idx], self.fine)
        return ok

    def failure_counts(self, A: np.ndarray) -> np.ndarray:
        """Failing grid nodes per minor, in check order."""
        prod = A @ self.fine
        order = pmatrix.check_order(A.shape[0])
        return (~pmatrix.positive_minor_mask(prod, order)).sum(axis=0)

    def certify(self, A: np.ndarray):
        return injectivity_constant(self.setup, self.rect, self.grid, A, with_report=True)


def _better(mu, A, best) -> bool:
    if best is None:
        return True
    if mu != best.mu:
        return mu > best.mu
    eye = np.eye(A.shape[0])
    return np.linalg.norm(A - eye) < np.linalg.norm(best.A - eye)


def search_transform(setup: MectSetup, rect: Rectangle | None = None, grid: ScanGrid | None = None,
                     budget: int = 10_000, strategy: str = "random", seed: int = 0,
                     improve: bool = False) -> Optional[InjectivityCertificate]:
    """Look for A (det 1) with A J(x) a P-matrix at every grid node.

    Trial 0 is the identity; if it passes and ``improve`` is false it is
    returned at once. Otherwise up to ``budget`` candidates are drawn
    (trial t uses seed (seed, t)) and the passing one with the largest
    injectivity constant wins, ties going to the smaller ||A - I||.
    ``random`` draws det-1 Gaussian matrices; ``adaptive`` multiplies the
    current best-effort A by members of M_i, with i taken from a failing
    minor, keeping each factor that reduces the number of failing nodes.
    """
    if budget <= 0:
        raise DomainError("budget must be positive")
    if strategy not in STRATEGIES:
        raise DomainError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    rect = rect if rect is not None else default_rectangle(setup)
    grid = grid if grid is not None else ScanGrid()
    if not setup.is_square:
        raise ShapeError(f"n != m: square setup required, got n={setup.n}, m={setup.m}")
    n = setup.n
    checker = _CandidateChecker(setup, rect, grid)
    best: Optional[InjectivityCertificate] = None

    def consider(A, trial, family):
        nonlocal best
        mu, where, report = checker.certify(A)
        if mu > 0 and _better(mu, A, best):
            best = InjectivityCertificate(A, mu, rect, grid, where, report, trial, strategy, seed, family)

    eye = np.eye(n)
    if checker.screen(eye[None])[0]:
        consider(eye, 0, "identity")
        if best is not None and not improve:
            return best

    if strategy == "random":
        for start in range(1, budget + 1, BLOCK):
            trials = range(start, min(start + BLOCK, budget + 1))
            As = np.stack([random_unimodular(n, (seed, t)).A for t in trials])
            for k in np.nonzero(checker.screen(As))[0]:
                consider(As[k], trials[k], "global_random")
            if best is not None and not improve:
                break
        return best

    current = eye
    counts = checker.failure_counts(current)
    order = pmatrix.check_order(n)
    for t in range(1, budget + 1):
        failing = [order[c] for c in np.nonzero(counts)[0] if order[c]]
        if not failing:
            rng = _rng((seed, t, 1))
            target = int(rng.integers(1, n + 1))
        else:
            # smallest failing minor first; the target must be one of its deleted indices
            K = failing[0]
            target = K[int(_rng((seed, t, 1)).integers(len(K)))]
        step = adaptive_candidate(n, target, (seed, t)).A
        cand = normalize_det(step @ current)
        if checker.screen(cand[None])[0]:
            consider(cand, t, "adaptive_product")
            if best is not None and not improve:
                return best
        new_counts = checker.failure_counts(cand)
        if failing and new_counts.sum() < counts.sum():
            current, counts = cand, new_counts
    return best
