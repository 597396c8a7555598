"""Numerical inversion of the (possibly transformed) forward map and
empirical checks of injectivity and the Lipschitz bounds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, Inconclusive, ShapeError
from .forward_model import MectSetup, SetupMap, as_map
from .rect_scan import Box, Rectangle, default_rectangle

ARMIJO = 1e-4
MIN_STEP = 1e-12
CLUSTER_RADIUS = 1e-6
RATIO_THRESHOLD = 1e-12  # |dx_i| below this is excluded from ratios
DEFAULT_MAX_ITER = {"newton": 100, "gauss_seidel": 1000}


@dataclass
class InversionResult:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    method: str = "newton"

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "residual": float(self.residual),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "method": self.method,
        }


class FlippedMap:
    """x -> D F(D x) for D = diag(signs); lives on D applied to the rectangle."""

    def __init__(self, base, signs):
        d = np.asarray(signs, dtype=float)
        if d.ndim != 1 or d.size != base.dim or not np.all(np.abs(d) == 1):
            raise DomainError("signs must be a +-1 vector of length m")
        self.base, self.signs = base, d
        self.dim, self.out_dim = base.dim, base.out_dim
        self.rect = getattr(base, "rect", None)

    def value(self, x):
        return self.base.value(np.asarray(x, dtype=float) * self.signs) * self.signs

    def jacobian(self, x):
        J = self.base.jacobian(np.asarray(x, dtype=float) * self.signs)
        return self.signs[:, None] * J * self.signs[None, :]

    def value_and_jacobian(self, x):
        return self.value(x), self.jacobian(x)

    def jacobian_field(self, points, cell=None):
        return np.atleast_3d(self.jacobian(np.atleast_2d(points)))

    def domain(self, rect: Rectangle) -> Box:
        a, b = rect.lower * self.signs, rect.upper * self.signs
        return Box(np.minimum(a, b), np.maximum(a, b))


def diagonal_flip(signs, setup_or_map) -> FlippedMap:
    return FlippedMap(as_map(setup_or_map), signs)


def _prepare(obj, rect, A=None):
    if isinstance(obj, MectSetup):
        if obj.n != obj.m:
            raise ShapeError("n != m")
        rect = rect if rect is not None else default_rectangle(obj)
    F = as_map(obj, A)
    if F.out_dim != F.dim:
        raise ShapeError("n != m")
    return F, rect


def _clamp(x, rect):
    return x if rect is None else np.clip(x, rect.lower, rect.upper)


def _newton(F, y, x, rect, tol, max_iter):
    r = F.value(x) - y
    res = np.max(np.abs(r))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        v, J = F.value_and_jacobian(x)
        r = v - y
        try:
            d = np.linalg.solve(J, r)
            if not np.all(np.isfinite(d)):
                raise np.linalg.LinAlgError
            directions = [d, J.T @ r]
        except np.linalg.LinAlgError:
            directions = [J.T @ r]
        norm = np.linalg.norm(r)
        moved = False
        for d in directions:
            alpha = 1.0
            while alpha >= MIN_STEP:
                xn = _clamp(x - alpha * d, rect)
                rn = F.value(xn) - y
                if np.linalg.norm(rn) <= (1 - ARMIJO * alpha) * norm:
                    x, r, moved = xn, rn, True
                    break
                alpha *= 0.5
            if moved:
                break
        res = np.max(np.abs(r))
        if not moved:
            break
    return x, res, it


def _gauss_seidel(F, y, x, rect, tol, max_iter):
    lo = rect.lower if rect is not None else np.zeros(F.dim)
    hi = rect.upper if rect is not None else np.full(F.dim, np.inf)
    res = np.max(np.abs(F.value(x) - y))
    it = 0
    while res > tol and it < max_iter:
        it += 1
        for i in range(F.dim):
            def phi(t, i=i):
                z = x.copy()
                z[i] = t
                return F.value(z)[i] - y[i]

            a, b = lo[i], hi[i]
            fa, fb = phi(a), phi(b)
            if not np.isfinite(b):
                b = max(1.0, 2 * abs(x[i]))
                fb = phi(b)
                while fb < 0 and b < 1e6:
                    b *= 2
                    fb = phi(b)
            # phi increases in t; clamp when y_i is out of reach on the box
            if fa >= 0:
                x[i] = a
            elif fb <= 0:
                x[i] = b
            else:
                x[i] = brentq(phi, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps)
        res = np.max(np.abs(F.value(x) - y))
    return x, res, it


def invert(setup, y, x0=None, method: str = "newton", tol: float = 1e-12, max_iter: int | None = None,
           rect: Rectangle | None = None, A=None) -> InversionResult:
    """Solve F(x) = y for x in the rectangle.

    ``setup`` is a square MectSetup (optionally with transform ``A``) or any
    map object. Newton is damped by Armijo backtracking and falls back to a
    gradient step on singular Jacobians; gauss_seidel solves each
    coordinate equation with a bracketed root finder. Non-convergence is
    reported through ``converged``. max_iter defaults to 100 Newton steps
    or 1000 sweeps; coupled setups make Gauss-Seidel contract slowly.
    """
    F, rect = _prepare(setup, rect, A)
    y = np.asarray(y, dtype=float)
    if y.shape != (F.dim,):
        raise ShapeError(f"y must have length {F.dim}")
    if A is not None:
        y = np.asarray(A, dtype=float) @ y
    if x0 is None:
        x0 = rect.center if rect is not None else np.zeros(F.dim)
    x = _clamp(np.array(x0, dtype=float), rect)
    if max_iter is None:
        max_iter = DEFAULT_MAX_ITER.get(method, 100)
    if method == "newton":
        x, res, it = _newton(F, y, x, rect, tol, max_iter)
    elif method == "gauss_seidel":
        x, res, it = _gauss_seidel(F, y, x, rect, tol, max_iter)
    else:
        raise DomainError(f"unknown method {method!r}")
    return InversionResult(x, float(res), it, bool(res <= tol), method)


@dataclass
class UniquenessResult:
    unique: bool
    solutions: list
    converged_runs: int
    starts: int

    def to_dict(self) -> dict:
        return {
            "unique": self.unique,
            "solutions": [[float(v) for v in s] for s in self.solutions],
            "converged_runs": self.converged_runs,
            "starts": self.starts,
        }


def cluster_points(points, radius: float = CLUSTER_RADIUS) -> list:
    """Greedy clustering in sup-norm; returns the cluster representatives."""
    reps: list = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= radius for q in reps):
            reps.append(p)
    return reps


def verify_unique_inversion(setup, rect: Rectangle | None = None, starts: int = 100, y=None,
                            tol: float = 1e-12, seed: int = 0, method: str = "newton",
                            max_iter: int | None = None) -> UniquenessResult:
    """Multi-start inversion; unique iff exactly one solution cluster."""
    F, rect = _prepare(setup, rect)
    if rect is None:
        raise DomainError("a rectangle is needed for random starts")
    y = np.zeros(F.dim) if y is None else np.asarray(y, dtype=float)
    found = []
    for k in range(starts):
        x0 = rect.sample(np.random.default_rng((seed, k)), 1)[0]
        res = invert(F, y, x0, method, tol, max_iter, rect)
        if res.converged:
            found.append(res.x)
    if not found:
        raise Inconclusive(f"none of {starts} runs converged")
    reps = cluster_points(found)
    return UniquenessResult(len(reps) == 1, reps, len(found), starts)


def find_noninjectivity_witness(setup, rect: Rectangle | None = None, nodes_per_axis: int = 9,
                                starts: int = 20, seed: int = 0):
    """Scan y over images of a coarse grid and return the first y that has
    two or more preimage clusters, with its result; None if none found."""
    from .rect_scan import grid_points

    F, rect = _prepare(setup, rect)
    pts = grid_points(rect, nodes_per_axis)
    dets = np.linalg.det(F.jacobian(pts))
    # nodes on the minority determinant side sit closest to a fold
    minority = np.sign(np.median(dets)) * dets < 0
    order = np.concatenate([np.flatnonzero(minority), np.flatnonzero(~minority)])
    for k in order:
        y = F.value(pts[k])
        try:
            result = verify_unique_inversion(F, rect, starts, y, seed=seed)
        except Inconclusive:
            continue
        if not result.unique:
            return y, result
    return None


@dataclass
class StabilityReport:
    pairs: int
    min_ratio: float
    violations: int
    lam: float
    ordered_violations: int = 0
    pfunction_violations: int = 0
    excluded: int = 0
    tolerance: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "pairs": self.pairs,
            "min_ratio": self.min_ratio,
            "violations": self.violations,
            "lambda": self.lam,
            "ordered_violations": self.ordered_violations,
            "pfunction_violations": self.pfunction_violations,
            "excluded": self.excluded,
            "tolerance": self.tolerance,
            **self.extra,
        }


def _pairs(rect, pairs, seed):
    rng = np.random.default_rng(seed)
    return rect.sample(rng, pairs), rect.sample(rng, pairs)


def verify_lipschitz(setup, rect: Rectangle | None = None, A=None, lam: float = 0.0, pairs: int = 10_000,
                     seed: int = 0) -> StabilityReport:
    """Check |F_i(x) - F_i(a)| >= lam |x_i - a_i| on random pairs, F = A I.

    Besides the componentwise count, reports the same bound on ordered
    pairs (x >= a) and violations of the P-function form
    max_k (x_k - a_k)((F - lam x)_k(x) - (F - lam x)_k(a)) > 0.
    Coordinates with |x_i - a_i| <= 1e-12 are left out of the ratio.
    """
    F, rect = _prepare(setup, rect, A)
    if rect is None:
        raise DomainError("a rectangle is needed for sampling")
    norm_a = 0.0 if A is None else float(np.linalg.norm(np.asarray(A, dtype=float), 2))
    tol = 1e-9 * (1.0 + norm_a)
    x, a = _pairs(rect, pairs, seed)
    dx = x - a
    dF = F.value(x) - F.value(a)
    mask = np.abs(dx) > RATIO_THRESHOLD
    ratio = np.where(mask, np.abs(dF) / np.where(mask, np.abs(dx), 1.0), np.inf)
    bad = np.abs(dF) < lam * np.abs(dx) - tol
    # ordered pairs: componentwise max/min of the same samples
    hi, lo = np.maximum(x, a), np.minimum(x, a)
    dFo = F.value(hi) - F.value(lo)
    bad_o = np.abs(dFo) < lam * (hi - lo) - tol
    pform = np.max(dx * (dF - lam * dx), axis=1)
    bad_p = pform < -tol * np.max(np.abs(dx), axis=1)
    return StabilityReport(
        pairs=pairs,
        min_ratio=float(ratio.min()) if mask.any() else float("inf"),
        violations=int(bad.any(axis=1).sum()),
        lam=float(lam),
        ordered_violations=int(bad_o.any(axis=1).sum()),
        pfunction_violations=int(bad_p.sum()),
        excluded=int((~mask).sum()),
        tolerance=tol,
    )


def verify_inverse_lipschitz(setup, rect: Rectangle | None = None, A=None, lam: float = 0.0,
                             pairs: int = 1000, seed: int = 0, method: str = "newton") -> StabilityReport:
    """Check |x_i - a_i| <= |y_i - b_i| / lam + 1e-8 with x, a recovered by
    inverting y = F(x*), b = F(a*) for random x*, a* in the rectangle."""
    F, rect = _prepare(setup, rect, A)
    if lam <= 0:
        raise DomainError("lambda must be positive for the inverse bound")
    xs, as_ = _pairs(rect, pairs, seed)
    ys, bs = F.value(xs), F.value(as_)
    xr = np.array([invert(F, y, None, method, rect=rect).x for y in ys])
    ar = np.array([invert(F, b, None, method, rect=rect).x for b in bs])
    dx, dy = xr - ar, ys - bs
    bad = np.abs(dx) > np.abs(dy) / lam + 1e-8
    mask = np.abs(dy) > RATIO_THRESHOLD
    ratio = np.where(mask, np.abs(dx) / np.where(mask, np.abs(dy), 1.0), 0.0)
    return StabilityReport(
        pairs=pairs,
        min_ratio=float(1.0 / ratio.max()) if ratio.max() > 0 else float("inf"),
        violations=int(bad.any(axis=1).sum()),
        lam=float(lam),
        excluded=int((~mask).sum()),
        tolerance=1e-8,
        extra={"max_roundtrip_error": float(max(np.max(np.abs(xr - xs)), np.max(np.abs(ar - as_))))},
    )
