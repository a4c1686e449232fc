"""Matrix-valued Schwinger-Dyson equation ``1 + (Lam + Phi(G)) G = 0``.

The physical solution is selected by continuation in an imaginary shift:
solve at ``Lam + i t`` for a large ``t`` where the map
``G -> -(Lam + i t + Phi(G))^{-1}`` is a contraction, then lower ``t``
geometrically to zero, warm-starting every step from the previous one.
Each step runs damped fixed-point iterations and falls back to damped
Newton steps when the fixed point stalls.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .linearize import CovarianceMap, SaltDesign, covariance_map

DEFAULT_MIN_IMAG = 1e-4
_DENSE_NEWTON_LIMIT = 1600


class SdConvergenceError(RuntimeError):
    def __init__(self, message: str, t: float = float("nan"), residual: float = float("nan")):
        self.t = t
        self.residual = residual
        super().__init__(message)


class SdRefusal(ValueError):
    """Raised when asked to solve too close to the real axis."""


@dataclass(frozen=True)
class ContinuationSchedule:
    t_start: float = 8.0
    factor: float = 0.7
    t_min: float = 1e-3
    damping: float = 0.5
    max_iter: int = 400
    tol: float = 1e-11
    final_tol: float = 1e-10
    newton_after: int = 60

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if not 0 < self.factor < 1:
            raise ValueError("factor must lie in (0, 1)")
        if self.t_start <= 0 or self.t_min <= 0:
            raise ValueError("t_start and t_min must be positive")

    def steps(self) -> list[float]:
        ts = []
        t = self.t_start
        while t > self.t_min:
            ts.append(t)
            t *= self.factor
        ts.append(0.0)
        return ts

    @classmethod
    def for_problem(cls, phi: CovarianceMap, lam: np.ndarray, **overrides) -> ContinuationSchedule:
        """Start at ``max(8, |Im lam| + 4 (1 + |Phi|))``."""
        imag = (lam - lam.conj().T) / 2j
        cutoff = float(np.linalg.norm(imag, 2)) + 4.0 * (1.0 + phi.norm)
        overrides.setdefault("t_start", max(cutoff, 8.0))
        return cls(**overrides)


@dataclass(frozen=True, eq=False)
class SdSolution:
    g: np.ndarray
    lam: np.ndarray
    residual: float
    path: tuple[tuple[float, int, float], ...] = field(default=())


def sd_residual(phi: CovarianceMap, lam: np.ndarray, g: np.ndarray) -> float:
    s = g.shape[0]
    return float(np.linalg.norm(np.eye(s) + (lam + phi(g)) @ g, 2))


def _newton_step(phi: CovarianceMap, lam: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Solve ``(lam + Phi(g)) d + Phi(d) g = -(1 + (lam + Phi(g)) g)``."""
    s = g.shape[0]
    left = lam + phi(g)
    rhs = -(np.eye(s) + left @ g).reshape(-1)
    if s * s <= _DENSE_NEWTON_LIMIT:
        jac = np.kron(left, np.eye(s))
        for a in phi.coefficients:
            jac += np.kron(a, (a @ g).T)
        return np.linalg.solve(jac, rhs).reshape(s, s)

    def matvec(v):
        d = v.reshape(s, s)
        return (left @ d + phi(d) @ g).reshape(-1)

    op = spla.LinearOperator((s * s, s * s), matvec=matvec, dtype=complex)
    sol, info = spla.gmres(op, rhs, rtol=1e-13, atol=0.0, restart=200, maxiter=50)
    if info != 0:
        raise np.linalg.LinAlgError("GMRES did not converge in the Newton step")
    return sol.reshape(s, s)


def _solve_step(
    phi: CovarianceMap,
    lam_t: np.ndarray,
    g: np.ndarray,
    schedule: ContinuationSchedule,
) -> tuple[np.ndarray, int, float]:
    alpha = schedule.damping
    residual = sd_residual(phi, lam_t, g)
    iterations = 0
    newton = False
    while residual > schedule.tol and iterations < schedule.max_iter:
        iterations += 1
        if newton:
            try:
                step = _newton_step(phi, lam_t, g)
            except np.linalg.LinAlgError:
                newton = False
                continue
            scale = 1.0
            for _ in range(9):
                trial = g + scale * step
                r_trial = sd_residual(phi, lam_t, trial)
                if r_trial < residual:
                    break
                scale /= 2
            else:
                raise SdConvergenceError("Newton step failed to reduce the residual", residual=residual)
            g, residual = trial, r_trial
            continue
        for _ in range(9):
            try:
                update = -np.linalg.inv(lam_t + phi(g))
            except np.linalg.LinAlgError:
                alpha /= 2
                continue
            break
        else:
            raise SdConvergenceError("singular fixed-point update after 8 damping halvings", residual=residual)
        trial = (1 - alpha) * g + alpha * update
        r_trial = sd_residual(phi, lam_t, trial)
        if r_trial > residual and alpha > 1e-3:
            alpha /= 2
        g, residual = trial, r_trial
        if iterations >= schedule.newton_after:
            newton = True
    if not np.isfinite(residual):
        raise SdConvergenceError("non-finite iterate", residual=residual)
    return g, iterations, residual


def solve_sd(
    phi: CovarianceMap,
    lam: np.ndarray,
    schedule: ContinuationSchedule | None = None,
    *,
    initial: np.ndarray | None = None,
    trace: IO[str] | Callable[[dict], None] | None = None,
) -> SdSolution:
    """Solve the SD equation at ``lam`` on the physical branch.

    Parameters
    ----------
    phi : covariance map
    lam : (s, s) complex array
    schedule : continuation schedule; defaults to ``for_problem(phi, lam)``
    initial : warm start; when given, the solve runs at ``t = 0`` directly
    trace : file-like receiving JSON lines ``{t, iterations, residual}``,
        or a callable receiving the same dicts
    """
    lam = np.asarray(lam, dtype=complex)
    s = lam.shape[0]
    if schedule is None:
        schedule = ContinuationSchedule.for_problem(phi, lam)
    if initial is not None:
        ts = [0.0]
        g = np.array(initial, dtype=complex)
    else:
        ts = schedule.steps()
        g = -np.linalg.inv(lam + 1j * ts[0] * np.eye(s))
    path = []
    for t in ts:
        lam_t = lam + 1j * t * np.eye(s)
        g, iterations, residual = _solve_step(phi, lam_t, g, schedule)
        record = {"t": t, "iterations": iterations, "residual": residual}
        path.append((t, iterations, residual))
        _emit(trace, record)
        step_tol = schedule.final_tol if t == 0.0 else max(schedule.tol * 100, 1e-8)
        if residual > step_tol:
            raise SdConvergenceError(
                f"no convergence at t={t:g}: residual {residual:.3g}", t=t, residual=residual
            )
    return SdSolution(g=g, lam=lam, residual=path[-1][2], path=tuple(path))


def _emit(trace, record: dict) -> None:
    if trace is None:
        return
    if callable(trace):
        trace(record)
    else:
        trace.write(json.dumps(record) + "\n")


def design_lambda(design: SaltDesign, z: complex, t: float = 0.0) -> np.ndarray:
    """``theta + z e + i t``."""
    return design.theta + z * design.e + 1j * t * np.eye(design.s)


def check_imag(z: complex, min_imag: float = DEFAULT_MIN_IMAG) -> None:
    if z.imag < min_imag:
        raise SdRefusal(
            f"Im z = {z.imag:.3g} is below the solver floor {min_imag:g}; "
            "the physical branch is not resolved this close to the real axis"
        )


def solve_design(
    design: SaltDesign,
    z: complex,
    *,
    t: float = 0.0,
    min_imag: float = DEFAULT_MIN_IMAG,
    initial: np.ndarray | None = None,
    schedule: ContinuationSchedule | None = None,
    trace=None,
) -> SdSolution:
    """Solve at ``Lam = theta + z e + i t`` for a design."""
    check_imag(complex(z), min_imag)
    phi = covariance_map(design)
    lam = design_lambda(design, z, t)
    if schedule is None:
        schedule = ContinuationSchedule(t_start=max(design.cutoff, 8.0))
    return solve_sd(phi, lam, schedule, initial=initial, trace=trace)


def is_physical(g: np.ndarray, tol: float = 1e-9) -> bool:
    """Imaginary part positive semidefinite (holds for Hermitian theta)."""
    imag = (g - g.conj().T) / 2j
    return bool(np.linalg.eigvalsh(imag).min() >= -tol)


# ----------------------------------------------------------------------------
# derived objects


def derivative_operator(phi: CovarianceMap, g: np.ndarray) -> np.ndarray:
    """Matrix of ``zeta -> D[G](Lam; zeta)`` on row-major flattenings.

    Inverts ``eta -> G^{-1} eta G^{-1} - Phi(eta)``.
    """
    g_inv = np.linalg.inv(g)
    return np.linalg.inv(np.kron(g_inv, g_inv.T) - phi.matrix)


def solve_derivative(phi: CovarianceMap, solution: SdSolution | np.ndarray, zeta: np.ndarray) -> np.ndarray:
    g = solution.g if isinstance(solution, SdSolution) else np.asarray(solution)
    s = g.shape[0]
    g_inv = np.linalg.inv(g)
    system = np.kron(g_inv, g_inv.T) - phi.matrix
    if np.linalg.cond(system) > 1e13:
        raise np.linalg.LinAlgError("linearized SD operator is singular: Lam is at a spectral edge")
    return np.linalg.solve(system, np.asarray(zeta, dtype=complex).reshape(-1)).reshape(s, s)


def secondary_g(psi: np.ndarray, solution: SdSolution | np.ndarray) -> np.ndarray:
    """``((G^{-1}) (x) (G^{-1}) - Psi)^{-1}`` as an ``s^2 x s^2`` Kronecker matrix."""
    g = solution.g if isinstance(solution, SdSolution) else np.asarray(solution)
    g_inv = np.linalg.inv(g)
    system = np.kron(g_inv, g_inv) - psi
    if np.linalg.cond(system) > 1e13:
        raise np.linalg.LinAlgError("secondary SD operator is singular")
    return np.linalg.inv(system)


# ----------------------------------------------------------------------------
# truncated Boltzmann-Fock oracle


def fock_dimension(m: int, depth: int) -> int:
    return sum(m**k for k in range(depth + 1))


def fock_creation(m: int, depth: int) -> list[sp.csr_matrix]:
    """Left creation operators on words of length at most ``depth``.

    Basis vectors are words ordered by length then lexicographically; the
    operator for letter ``l`` sends ``v(w)`` to ``v(l w)`` and kills words
    already at full length.
    """
    offsets = [0]
    for k in range(depth + 1):
        offsets.append(offsets[-1] + m**k)
    dim = offsets[-1]
    mats = []
    for letter in range(m):
        rows, cols = [], []
        for k in range(depth):
            count = m**k
            # word index within length k is its base-m value; prepending a letter adds letter*m^k
            src = np.arange(count)
            dst = letter * count + src
            rows.append(offsets[k + 1] + dst)
            cols.append(offsets[k] + src)
        rows = np.concatenate(rows) if rows else np.zeros(0, dtype=int)
        cols = np.concatenate(cols) if cols else np.zeros(0, dtype=int)
        mats.append(sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(dim, dim)))
    return mats


def fock_oracle(design: SaltDesign, lam: np.ndarray, depth: int) -> np.ndarray:
    """Vacuum block of ``(sum_l Xi_l (x) a_l - 1 (x) lam)^{-1}`` on truncated Fock space.

    ``Xi_l = i^l S_l + i^{-l} S_l^*`` with ``S_l`` the left creation
    operators.  With ``depth = 0`` this is ``-lam^{-1}``.
    """
    s, m = design.s, design.m
    lam = np.asarray(lam, dtype=complex)
    if depth == 0 or m == 0:
        return -np.linalg.inv(lam)
    creations = fock_creation(m, depth)
    dim = creations[0].shape[0]
    big = -sp.kron(sp.identity(dim, format="csr"), sp.csr_matrix(lam), format="csc")
    for ell, (create, a) in enumerate(zip(creations, design.coefficients), start=1):
        phase = 1j**ell
        xi = phase * create + np.conj(phase) * create.T
        big = big + sp.kron(xi, sp.csr_matrix(a), format="csc")
    rhs = np.zeros((dim * s, s), dtype=complex)
    rhs[:s, :s] = np.eye(s)
    lu = spla.splu(big.tocsc())
    sol = lu.solve(rhs)
    if not np.all(np.isfinite(sol)):
        raise np.linalg.LinAlgError("truncated Fock operator is singular")
    return sol[:s, :s]


def semicircle_stieltjes(z: complex, variance: float = 1.0) -> complex:
    """``(-z + sqrt(z^2 - 4 v)) / (2 v)`` on the branch with positive imaginary part."""
    z = complex(z)
    edge = 2 * math.sqrt(variance)
    # product of principal roots picks the decaying branch off the cut
    root = np.sqrt(z - edge) * np.sqrt(z + edge)
    return complex((-z + root) / (2 * variance))
