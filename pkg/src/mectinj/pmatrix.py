"""P-matrix tests, principal minors in the deletion convention, margins.

Minor indices are tuples of 1-based *deleted* indices: ``()`` is the full
determinant, ``(2,)`` deletes row and column 2, and so on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import ShapeError

MinorIndex = tuple  # sorted tuple of 1-based deleted indices

REL_TOL = 1e-12
MAX_MINOR_N = 12
MAX_WITNESS_N = 8
MARGIN_TOL = 1e-8


def _square(A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {A.shape}")
    return A


def _square_batch(mats) -> np.ndarray:
    mats = np.asarray(mats, dtype=float)
    if mats.ndim == 2:
        mats = mats[None]
    if mats.ndim != 3 or mats.shape[1] != mats.shape[2]:
        raise ShapeError(f"expected a stack of square matrices, got shape {mats.shape}")
    return mats


def label(deleted: Sequence[int]) -> str:
    """Table label of a minor: ``∅`` or ``{1,3}``."""
    return "{" + ",".join(map(str, deleted)) + "}" if deleted else "∅"


@lru_cache(maxsize=None)
def report_order(n: int) -> tuple[MinorIndex, ...]:
    """Principal minors in report-table order.

    Deletion size ascending. Sets deleting at most half the indices are
    listed lexicographically by deleted index, larger deletions by their
    surviving indices (n=3 gives ∅,{1},{2},{3},{2,3},{1,3},{1,2}).
    """
    full = range(1, n + 1)
    out: list[MinorIndex] = []
    for size in range(n):
        if 2 * size <= n:
            out += list(itertools.combinations(full, size))
        else:
            kept = itertools.combinations(full, n - size)
            out += [tuple(i for i in full if i not in k) for k in kept]
    return tuple(out)


@lru_cache(maxsize=None)
def check_order(n: int) -> tuple[MinorIndex, ...]:
    """Order in which is_p_matrix examines minors.

    Submatrix size ascending, lexicographic in the kept indices, so the
    1x1 minors (diagonal entries) come first.
    """
    full = range(1, n + 1)
    out: list[MinorIndex] = []
    for k in range(1, n + 1):
        for kept in itertools.combinations(full, k):
            out.append(tuple(i for i in full if i not in kept))
    return tuple(out)


def _kept(n: int, deleted: Sequence[int]) -> list[int]:
    dels = set(deleted)
    if any(not 1 <= d <= n for d in dels) or len(dels) != len(deleted):
        raise ShapeError(f"bad minor index {tuple(deleted)} for n={n}")
    return [i - 1 for i in range(1, n + 1) if i not in dels]


def minor(A, rows_deleted: Sequence[int], cols_deleted: Sequence[int]) -> float:
    """[A]_{K,L}: determinant after deleting rows K and columns L (1-based)."""
    A = np.asarray(A, dtype=float)
    if len(rows_deleted) != len(cols_deleted):
        raise ShapeError("row and column deletion sets must have equal size")
    r = _kept(A.shape[0], rows_deleted)
    c = _kept(A.shape[1], cols_deleted)
    if not r:
        return 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        return float(np.linalg.det(A[np.ix_(r, c)]))


def principal_minor(A, deleted: Sequence[int] = ()) -> float:
    """[A]_K. Deleting every index gives the empty determinant, 1."""
    A = _square(A)
    return minor(A, tuple(deleted), tuple(deleted))


def _threshold(scale, k: int):
    return REL_TOL * scale ** k


def principal_minors_batch(mats, order: Sequence[MinorIndex] | None = None) -> np.ndarray:
    """All principal minors of a stack of matrices, shape (N, len(order))."""
    mats = _square_batch(mats)
    n = mats.shape[1]
    order = report_order(n) if order is None else order
    out = np.empty((mats.shape[0], len(order)))
    with np.errstate(divide="ignore", invalid="ignore"):  # singular LU pivots
        for col, deleted in enumerate(order):
            kept = _kept(n, deleted)
            out[:, col] = np.linalg.det(mats[:, kept][:, :, kept]) if kept else 1.0
    return out


def positive_minor_mask(mats, order: Sequence[MinorIndex] | None = None) -> np.ndarray:
    """Boolean (N, len(order)): minor exceeds the strictness threshold."""
    mats = _square_batch(mats)
    n = mats.shape[1]
    order = report_order(n) if order is None else order
    minors = principal_minors_batch(mats, order)
    scale = np.abs(mats).max(axis=(1, 2))
    sizes = np.array([n - len(d) for d in order])
    return minors > REL_TOL * scale[:, None] ** sizes[None, :]


def is_p_batch(mats) -> np.ndarray:
    mats = _square_batch(mats)
    return positive_minor_mask(mats).all(axis=1)


@dataclass(frozen=True)
class Classification:
    is_p: bool
    is_pqd: bool
    is_sdd: bool
    failing_minor: Optional[MinorIndex] = None
    witness: Optional[np.ndarray] = None


def first_failing_minor(A) -> Optional[MinorIndex]:
    A = _square(A)
    n = A.shape[0]
    scale = np.abs(A).max()
    for deleted in check_order(n):
        if not principal_minor(A, deleted) > _threshold(scale, n - len(deleted)):
            return deleted
    return None


def is_p_matrix(A, with_witness: bool = False) -> Classification:
    """Classify A by enumerating its 2^n - 1 principal minors.

    A minor of a k x k submatrix counts as positive only above
    1e-12 * max|a_ij|^k. On failure the first failing minor in
    :func:`check_order` is reported.
    """
    A = _square(A)
    n = A.shape[0]
    if n > MAX_MINOR_N:
        raise ShapeError(f"minor enumeration limited to n <= {MAX_MINOR_N}")
    failing = first_failing_minor(A)
    witness = None
    if failing is not None and with_witness and n <= MAX_WITNESS_N:
        witness = find_sign_reversal_witness(A)
    return Classification(
        is_p=failing is None,
        is_pqd=is_positive_quasidefinite(A),
        is_sdd=is_strictly_diag_dominant(A),
        failing_minor=failing,
        witness=witness,
    )


def is_p(A) -> bool:
    return first_failing_minor(A) is None


def find_sign_reversal_witness(A, tol: float = 1e-9) -> Optional[np.ndarray]:
    """Nonzero x with x_i (Ax)_i <= 0 for all i, or None.

    For each sign pattern s (s_1 = +1; -x is a witness whenever x is) solve
    the LP  min t  s.t.  s_i (Ax)_i <= t,  s_i x_i >= 0,  sum s_i x_i = 1.
    A witness exists in that orthant iff the optimum t <= 0; ``tol`` (scaled
    by max|a_ij|) absorbs solver round-off.
    """
    A = _square(A)
    n = A.shape[0]
    if n > MAX_WITNESS_N:
        raise ShapeError(f"orthant enumeration limited to n <= {MAX_WITNESS_N}")
    scale = max(np.abs(A).max(), 1e-300)
    c = np.zeros(n + 1)
    c[-1] = 1.0
    for tail in itertools.product((1.0, -1.0), repeat=n - 1):
        s = np.array((1.0,) + tail)
        # rows: s_i (A x)_i - t <= 0
        a_ub = np.hstack([s[:, None] * A, -np.ones((n, 1))])
        a_eq = np.append(s, 0.0)[None, :]
        bounds = [(0, None) if si > 0 else (None, 0) for si in s] + [(None, None)]
        res = linprog(c, A_ub=a_ub, b_ub=np.zeros(n), A_eq=a_eq, b_eq=[1.0],
                      bounds=bounds, method="highs")
        if res.status == 0 and res.fun <= tol * scale:
            x = res.x[:n]
            return x / np.abs(x).max()
    return None


def is_positive_quasidefinite(A) -> bool:
    """Smallest eigenvalue of (A + A^T)/2 above 1e-12 * ||A||_2."""
    A = _square(A)
    sym = (A + A.T) / 2
    return bool(np.linalg.eigvalsh(sym)[0] > REL_TOL * np.linalg.norm(A, 2))


def is_pqd_batch(mats) -> np.ndarray:
    mats = _square_batch(mats)
    sym = (mats + mats.transpose(0, 2, 1)) / 2
    return np.linalg.eigvalsh(sym)[:, 0] > REL_TOL * np.linalg.norm(mats, 2, axis=(1, 2))


def is_strictly_diag_dominant(A) -> bool:
    A = _square(A)
    return bool(is_sdd_batch(A)[0])


def is_sdd_batch(mats) -> np.ndarray:
    mats = _square_batch(mats)
    diag = np.diagonal(mats, axis1=1, axis2=2)
    off = np.abs(mats).sum(axis=2) - np.abs(diag)
    return np.all((diag > 0) & (diag > off), axis=1)


def product_minor(A, J, K: Sequence[int], L: Sequence[int]) -> float:
    """[AJ]_{K,L} via the Cauchy-Binet sum over deletion sets M, |M| = |K|."""
    A = _square(A)
    J = _square(J)
    n = A.shape[0]
    if J.shape != A.shape:
        raise ShapeError("A and J must have the same shape")
    if len(K) != len(L):
        raise ShapeError("|K| must equal |L|")
    return float(sum(minor(A, K, M) * minor(J, M, L)
                     for M in itertools.combinations(range(1, n + 1), len(K))))


def first_real_crossing(mats) -> np.ndarray:
    """Smallest real eigenvalue over all principal submatrices, per matrix.

    det(A_K - lam I) keeps the sign it has at lam -> -inf (positive) until
    lam reaches the smallest real eigenvalue of A_K, so this is the first
    lam at which A - lam I stops being a P-matrix, ignoring the strictness
    threshold.
    """
    mats = _square_batch(mats)
    n = mats.shape[1]
    best = np.full(mats.shape[0], np.inf)
    for deleted in check_order(n):
        kept = _kept(n, deleted)
        ev = np.linalg.eigvals(mats[:, kept][:, :, kept])
        scale = np.maximum(np.abs(ev).max(axis=1, keepdims=True), 1e-300)
        real = np.abs(ev.imag) <= 1e-12 * scale
        cand = np.where(real, ev.real, np.inf).min(axis=1)
        best = np.minimum(best, cand)
    return best


def p_matrix_margin_batch(mats, tol: float = MARGIN_TOL) -> np.ndarray:
    """Vectorized :func:`p_matrix_margin`; 0 for matrices that are not P."""
    mats = _square_batch(mats)
    N, n, _ = mats.shape
    eye = np.eye(n)
    ok = is_p_batch(mats)
    lo = np.zeros(N)
    crossing = np.where(ok, first_real_crossing(mats), 0.0)
    hi = np.maximum(crossing, 0.0)
    # make sure hi fails; the eigenvalue bracket can pass by round-off
    pad = tol
    for _ in range(60):
        still = ok & is_p_batch(mats - hi[:, None, None] * eye)
        if not still.any():
            break
        lo = np.where(still, hi, lo)
        hi = np.where(still, hi + pad, hi)
        pad *= 2
    active = ok & (hi - lo > tol)
    while active.any():
        mid = (lo + hi) / 2
        passed = is_p_batch(mats - mid[:, None, None] * eye)
        lo = np.where(active & passed, mid, lo)
        hi = np.where(active & ~passed, mid, hi)
        active = ok & (hi - lo > tol)
    # polish: just below the eigenvalue crossing is usually still P, which
    # tightens the certified bound well past tol
    near = crossing - 1e-12 * (1.0 + np.abs(crossing))
    try_near = ok & np.isfinite(near) & (near > lo) & (near < hi)
    if try_near.any():
        passed = is_p_batch(mats - np.where(try_near, near, 0.0)[:, None, None] * eye)
        lo = np.where(try_near & passed, near, lo)
    return np.where(ok, lo, 0.0)


def p_matrix_margin(A, tol: float = MARGIN_TOL) -> float:
    """Certified lower bound on sup{lam >= 0 : A - lam I is a P-matrix}.

    Bisection on lam with is_p_matrix as the predicate, bracketed by
    [0, first_real_crossing(A)]. Returns the last passing endpoint, or a
    point just below the crossing when that one still passes.
    """
    return float(p_matrix_margin_batch(_square(A), tol)[0])
