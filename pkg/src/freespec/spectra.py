"""Spectral data of the limit law: Stieltjes transform, density, support, norm."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .linearize import SaltDesign, covariance_map, linearize
from .ncpoly import MatrixPolynomial
from .sdsolver import (
    DEFAULT_MIN_IMAG,
    ContinuationSchedule,
    SdConvergenceError,
    check_imag,
    design_lambda,
    is_physical,
    solve_design,
    solve_sd,
)

DETECT_EPSILON = 1e-3
DETECT_THRESHOLD = 1e-2
REFINE_EPSILON = 1e-5
# inside the support the smoothed density barely moves when epsilon halves;
# outside it halves along with epsilon
_INSIDE_RATIO = 0.75


def corner_trace(design: SaltDesign, x: np.ndarray) -> complex:
    """Normalized trace ``tr(e x) / tr(e)``."""
    return complex(np.trace(design.e @ x) / np.trace(design.e).real)


def stieltjes(
    design: SaltDesign,
    z: complex,
    *,
    min_imag: float = DEFAULT_MIN_IMAG,
    schedule: ContinuationSchedule | None = None,
) -> complex:
    if design.n < 1:
        raise ValueError("design has an empty corner")
    solution = solve_design(design, complex(z), min_imag=min_imag, schedule=schedule)
    return corner_trace(design, solution.g)


class _PointSolver:
    """Warm-started solves along a path of spectral parameters."""

    def __init__(
        self,
        design: SaltDesign,
        min_imag: float = DEFAULT_MIN_IMAG,
        schedule: ContinuationSchedule | None = None,
    ):
        self.design = design
        self.phi = covariance_map(design)
        self.schedule = schedule or ContinuationSchedule(t_start=max(design.cutoff, 8.0))
        self.min_imag = min_imag
        self.previous: np.ndarray | None = None
        self.hermitian = np.allclose(design.theta, design.theta.conj().T)

    def solve(self, z: complex) -> np.ndarray:
        check_imag(z, self.min_imag)
        lam = design_lambda(self.design, z)
        if self.previous is not None:
            try:
                sol = solve_sd(self.phi, lam, self.schedule, initial=self.previous)
                if not self.hermitian or is_physical(sol.g):
                    self.previous = sol.g
                    return sol.g
            except (SdConvergenceError, np.linalg.LinAlgError):
                pass
        sol = solve_sd(self.phi, lam, self.schedule)
        self.previous = sol.g
        return sol.g

    def stieltjes(self, z: complex) -> complex:
        return corner_trace(self.design, self.solve(z))

    def density(self, x: float, epsilon: float) -> float:
        return self.stieltjes(complex(x, epsilon)).imag / math.pi


@dataclass(frozen=True, eq=False)
class DensityCurve:
    grid: np.ndarray
    values: np.ndarray
    epsilon: float
    failed: tuple[int, ...] = ()

    def mass(self) -> float:
        ok = np.isfinite(self.values)
        return float(np.trapezoid(self.values[ok], self.grid[ok]))

    def to_json(self) -> str:
        return json.dumps(
            {
                "epsilon": self.epsilon,
                "x": [float(x) for x in self.grid],
                "density": [float(v) for v in self.values],
                "failed": list(self.failed),
            }
        )


def density(
    design: SaltDesign,
    grid,
    epsilon: float = DETECT_EPSILON,
    *,
    min_imag: float = DEFAULT_MIN_IMAG,
    schedule: ContinuationSchedule | None = None,
) -> DensityCurve:
    """``(1/pi) Im S(x + i epsilon)`` on a grid, warm-started left to right.

    Points where the solver fails are reported as NaN and listed in
    ``failed``.
    """
    grid = np.asarray(grid, dtype=float)
    check_imag(complex(0, epsilon), min_imag)
    solver = _PointSolver(design, min_imag, schedule)
    values = np.empty(len(grid))
    failed = []
    for k, x in enumerate(grid):
        try:
            values[k] = solver.density(x, epsilon)
        except (SdConvergenceError, np.linalg.LinAlgError):
            values[k] = np.nan
            failed.append(k)
            solver.previous = None
    return DensityCurve(grid=grid, values=values, epsilon=epsilon, failed=tuple(failed))


@dataclass(frozen=True)
class SupportSet:
    intervals: tuple[tuple[float, float], ...]
    threshold: float = DETECT_THRESHOLD
    epsilon: float = REFINE_EPSILON
    search: tuple[float, float] = field(default=(0.0, 0.0))

    @property
    def lower(self) -> float:
        return self.intervals[0][0]

    @property
    def upper(self) -> float:
        return self.intervals[-1][1]

    def contains(self, x: float, fatten: float = 0.0) -> bool:
        return any(lo - fatten <= x <= hi + fatten for lo, hi in self.intervals)

    def to_json(self) -> str:
        return json.dumps([[lo, hi] for lo, hi in self.intervals])


class EmptySupportError(RuntimeError):
    pass


def default_search_interval(design: SaltDesign) -> tuple[float, float]:
    """Padded symmetric interval expected to contain the spectrum.

    Uses the polynomial bound stored by ``linearize`` when present, otherwise
    ``|theta| + 2 sum |a_l|``.
    """
    radius = design.meta.get("norm_bound")
    if radius is None:
        radius = float(np.linalg.norm(design.theta, 2)) + 2.0 * sum(
            float(np.linalg.norm(a, 2)) for a in design.coefficients
        )
    radius = 1.1 * radius + 0.1
    return -radius, radius


def support(
    design: SaltDesign,
    search: tuple[float, float] | None = None,
    tol: float = 1e-3,
    *,
    points: int = 600,
    threshold: float = DETECT_THRESHOLD,
    detect_epsilon: float = DETECT_EPSILON,
    refine_epsilon: float = REFINE_EPSILON,
    schedule: ContinuationSchedule | None = None,
) -> SupportSet:
    """Locate the support of the limit law.

    Intervals are first detected where the density at ``detect_epsilon``
    exceeds ``threshold`` on a uniform grid; the search interval doubles
    while a detected run touches its boundary.  Each endpoint is then
    bracketed and bisected down to width ``tol`` while epsilon falls
    geometrically to ``refine_epsilon``.  A point counts as inside when
    halving epsilon keeps at least 3/4 of the smoothed density.
    """
    lo, hi = search if search is not None else default_search_interval(design)
    floor = min(detect_epsilon, refine_epsilon) / 2
    for _ in range(8):
        grid = np.linspace(lo, hi, points)
        curve = density(design, grid, detect_epsilon, min_imag=floor, schedule=schedule)
        above = np.nan_to_num(curve.values, nan=0.0) > threshold
        if not above.any():
            raise EmptySupportError("no support detected: density never exceeds the threshold")
        if not (above[0] or above[-1]):
            break
        center, half = (lo + hi) / 2, (hi - lo)
        lo, hi = center - half, center + half
    runs = []
    k = 0
    while k < len(grid):
        if above[k]:
            start = k
            while k + 1 < len(grid) and above[k + 1]:
                k += 1
            runs.append((start, k))
        k += 1
    step = grid[1] - grid[0]
    intervals = []
    for start, stop in runs:
        span = (grid[start], grid[stop])
        edge = dict(
            tol=tol, eps_start=detect_epsilon, eps_end=refine_epsilon, floor=floor, schedule=schedule
        )
        left = _refine_edge(design, span, -step, **edge)
        right = _refine_edge(design, span, step, **edge)
        if left is not None and right is not None and left < right:
            intervals.append((left, right))
    if not intervals:
        raise EmptySupportError("detected runs vanished under refinement")
    merged = []
    for a, b in sorted(intervals):
        if merged and a <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(b, merged[-1][1]))
        else:
            merged.append((a, b))
    return SupportSet(
        intervals=tuple(merged), threshold=threshold, epsilon=refine_epsilon, search=(lo, hi)
    )


def _inside(design: SaltDesign, x: float, epsilon: float, floor: float, schedule=None) -> bool:
    solver = _PointSolver(design, floor, schedule)
    # approach the target epsilon from above so the branch is the physical one
    eps = max(epsilon, DETECT_EPSILON)
    while True:
        rho = solver.density(x, eps)
        if eps <= epsilon:
            break
        eps = max(eps * 0.1, epsilon)
    half = solver.density(x, epsilon / 2)
    return rho > 0 and half > _INSIDE_RATIO * rho


def _refine_edge(design, span, step, tol, eps_start, eps_end, floor, schedule=None) -> float | None:
    """Bracket the edge of a detected run on the side given by ``step`` and bisect.

    The threshold test can flag leakage just outside the support, so the
    bracket starts from the run end, walks inward until the inside test holds,
    then outward until it fails.
    """
    lo, hi = span
    a = hi if step > 0 else lo
    while not _inside(design, a, eps_start, floor, schedule):
        a -= step
        if not lo - abs(step) / 2 <= a <= hi + abs(step) / 2:
            return None
    b = a + step
    for _ in range(200):
        if not _inside(design, b, eps_start, floor, schedule):
            break
        a, b = b, b + step
    width = abs(b - a)
    n_steps = max(1, math.ceil(math.log2(width / tol))) if width > tol else 1
    for k in range(n_steps):
        eps = eps_start * (eps_end / eps_start) ** ((k + 1) / n_steps)
        mid = 0.5 * (a + b)
        if _inside(design, mid, eps, floor, schedule):
            a = mid
        else:
            b = mid
    return 0.5 * (a + b)


def operator_norm(
    f: MatrixPolynomial, tol: float = 1e-3, *, schedule: ContinuationSchedule | None = None
) -> float:
    """Norm of ``f`` evaluated at free semicircular variables.

    Self-adjoint ``f`` use the larger support endpoint in absolute value;
    otherwise the norm is the square root of the top of the support of ``f f*``.
    """
    if f.degree <= 0:
        constant = np.array([[p.coefficient(()) for p in row] for row in f.entries])
        return float(np.linalg.norm(constant, 2))
    if f.is_self_adjoint():
        supp = support(linearize(f), tol=tol, schedule=schedule)
        return max(abs(supp.lower), abs(supp.upper))
    supp = support(linearize(f * f.adjoint()), tol=tol, schedule=schedule)
    return math.sqrt(max(supp.upper, 0.0))
