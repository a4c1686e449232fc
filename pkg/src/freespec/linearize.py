"""Self-adjoint linearizations (SALT block designs) of matrix polynomials.

A design is a pencil ``L(X) = sum_l X_l (x) a_l`` together with a constant
block ``theta`` and a projection ``e`` such that the upper-left ``n x n``
corner of ``(L(X) - 1 (x) (theta + z e))^{-1}`` is ``(f(X) - z)^{-1}``.

Elements of the tensor square ``S (x) S`` are stored as ``s^2 x s^2``
Kronecker matrices, so ``x (x) y`` is ``np.kron(x, y)``.  Linear operators on
``S`` are stored as ``s^2 x s^2`` matrices acting on row-major flattenings,
so ``zeta -> x zeta y`` is ``np.kron(x, y.T)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .ncpoly import MatrixPolynomial, NcPolynomial


class NotSelfAdjointError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SaltDesign:
    """Block design ``(S, L, theta, e)`` with ``S = Mat_s(C)``.

    ``coefficients[l-1]`` is the matrix ``a_l`` multiplying ``X_l``; the
    constant coefficient of the pencil is ``a_0 = -theta``.
    """

    s: int
    n: int
    coefficients: tuple[np.ndarray, ...]
    theta: np.ndarray
    e: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def m(self) -> int:
        return len(self.coefficients)

    @property
    def a(self) -> tuple[np.ndarray, ...]:
        return (-self.theta,) + tuple(self.coefficients)

    @cached_property
    def phi_norm(self) -> float:
        return covariance_map(self).norm

    @cached_property
    def cutoff(self) -> float:
        imag_theta = (self.theta - self.theta.conj().T) / 2j
        return float(np.linalg.norm(imag_theta, 2) + 4.0 * (1.0 + self.phi_norm))

    def pencil(self, xs) -> np.ndarray:
        """``L(xs) = sum_l kron(xs[l], a_l)``: a grid of ``s x s`` blocks."""
        xs = [np.asarray(x) for x in xs]
        size = xs[0].shape[0] if xs else 1
        out = np.zeros((size * self.s, size * self.s), dtype=complex)
        for x, a in zip(xs, self.coefficients):
            out += np.kron(x, a)
        return out

    def to_json(self) -> str:
        return json.dumps(
            {
                "s": self.s,
                "n": self.n,
                "m": self.m,
                "coefficients": [_encode_matrix(a) for a in self.coefficients],
                "theta": _encode_matrix(self.theta),
                "e": _encode_matrix(self.e),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> SaltDesign:
        data = json.loads(text)
        coefficients = tuple(_decode_matrix(a) for a in data["coefficients"])
        if len(coefficients) != data["m"]:
            raise ValueError("field m disagrees with the number of coefficients")
        design = cls(
            s=int(data["s"]),
            n=int(data["n"]),
            coefficients=coefficients,
            theta=_decode_matrix(data["theta"]),
            e=_decode_matrix(data["e"]),
        )
        for a in design.a:
            if a.shape != (design.s, design.s):
                raise ValueError(f"matrix of shape {a.shape} in a design with s={design.s}")
        return design

    def same_as(self, other: SaltDesign) -> bool:
        """Exact structural equality (used for serialization round trips)."""
        return (
            self.s == other.s
            and self.n == other.n
            and self.m == other.m
            and all(np.array_equal(x, y) for x, y in zip(self.a, other.a))
            and np.array_equal(self.e, other.e)
        )


def _encode_matrix(a: np.ndarray) -> list:
    a = np.asarray(a, dtype=complex)
    return [[[float(v.real) + 0.0, float(v.imag) + 0.0] for v in row] for row in a]


def _decode_matrix(rows: list) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows], dtype=complex)


def corner_projection(s: int, n: int) -> np.ndarray:
    e = np.zeros((s, s), dtype=complex)
    e[:n, :n] = np.eye(n)
    return e


# ----------------------------------------------------------------------------
# construction


def _is_even_palindrome(word) -> bool:
    return len(word) % 2 == 0 and tuple(word) == tuple(word[::-1])


def _reduce_once(grid: list[list[NcPolynomial]]) -> list[list[NcPolynomial]]:
    """One Schur-complement step lowering the degree of a self-adjoint grid.

    Every monomial ``c w`` of degree ``d >= 2`` in entry ``(i, j)`` is cut as
    ``w = u v`` at ``ceil(d/2)`` and contributes the column pair
    ``f1 = (c/2) u e_i``, ``f2 = v* e_j`` so that the high part equals
    ``f1 f2* + f2 f1*``.  The new grid is ``[[low, b], [b*, d]]`` with
    ``b = [f1 f2]`` and ``d = -[[0, 1], [1, 0]]``; its Schur complement onto
    the old coordinates is the old grid.  Even palindromes ``c u u*`` on the
    diagonal take a single column with ``d = -1/c``.
    """
    k = len(grid)
    zero = NcPolynomial()
    low = [[NcPolynomial.from_terms({w: c for w, c in p.items if len(w) <= 1}) for p in row] for row in grid]
    pair_left, pair_right, singles, single_d = [], [], [], []
    for i in range(k):
        for j in range(k):
            for word, c in grid[i][j].items:
                d = len(word)
                if d < 2:
                    continue
                if i == j and _is_even_palindrome(word):
                    u = NcPolynomial.from_terms({word[: d // 2]: 1.0})
                    col = [zero] * k
                    col[i] = u
                    singles.append(col)
                    single_d.append(-1.0 / c.real)
                    continue
                cut = math.ceil(d / 2)
                u = NcPolynomial.from_terms({word[:cut]: c / 2})
                v_star = NcPolynomial.from_terms({word[cut:][::-1]: 1.0})
                left = [zero] * k
                right = [zero] * k
                left[i] = u
                right[j] = v_star
                pair_left.append(left)
                pair_right.append(right)
    r = len(pair_left)
    columns = pair_left + pair_right + singles
    q = len(columns)
    d_block = np.zeros((q, q))
    d_block[:r, r : 2 * r] = -np.eye(r)
    d_block[r : 2 * r, :r] = -np.eye(r)
    for idx, value in enumerate(single_d):
        d_block[2 * r + idx, 2 * r + idx] = value
    size = k + q
    new = [[zero] * size for _ in range(size)]
    for i in range(k):
        for j in range(k):
            new[i][j] = low[i][j]
        for c_idx, col in enumerate(columns):
            new[i][k + c_idx] = col[i]
            new[k + c_idx][i] = col[i].adjoint()
    for p in range(q):
        for t in range(q):
            if d_block[p, t] != 0:
                new[k + p][k + t] = NcPolynomial.constant(d_block[p, t])
    return new


def linearize(f: MatrixPolynomial) -> SaltDesign:
    """Build a self-adjoint linearization of a self-adjoint matrix polynomial.

    Degree-one inputs are wrapped directly (``s == n``).  Higher degrees are
    reduced by repeated Schur-complement steps until every entry is affine.
    """
    if not f.is_self_adjoint(1e-12):
        raise NotSelfAdjointError("linearize needs a self-adjoint matrix polynomial")
    # exact symmetrization removes rounding asymmetry in the coefficients
    f = (f + f.adjoint()) * 0.5
    grid = [list(row) for row in f.entries]
    while max(p.degree for row in grid for p in row) > 1:
        grid = _reduce_once(grid)
    s, n, m = len(grid), f.n, f.num_variables
    coefficients = tuple(
        np.array([[grid[i][j].coefficient((ell,)) for j in range(s)] for i in range(s)])
        for ell in range(1, m + 1)
    )
    a0 = np.array([[grid[i][j].coefficient(()) for j in range(s)] for i in range(s)])
    return SaltDesign(
        s=s,
        n=n,
        coefficients=coefficients,
        theta=-a0,
        e=corner_projection(s, n),
        meta={"norm_bound": norm_bound(f)},
    )


def norm_bound(f: MatrixPolynomial) -> float:
    """Crude bound on the norm of ``f`` at semicircular variables (each of norm 2)."""
    return float(
        sum(abs(c) * 2.0 ** len(w) for row in f.entries for p in row for w, c in p.items)
    )


def random_hermitian(rng: np.random.Generator, size: int) -> np.ndarray:
    g = (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))) / math.sqrt(2)
    return (g + g.conj().T) / 2


def verify_linearization(
    f: MatrixPolynomial,
    design: SaltDesign,
    trials: int = 20,
    seed: int = 0,
    z: complex = 2j,
    size: int = 3,
) -> tuple[bool, float]:
    """Compare the pencil's resolvent corner with ``(f(xi) - z)^{-1}``.

    Returns ``(ok, worst Frobenius deviation)`` with ``ok`` meaning the
    deviation is at most 1e-9.  Singular draws are redrawn.
    """
    if design.n != f.n:
        raise ValueError(f"design corner size {design.n} differs from polynomial size {f.n}")
    m = max(design.m, f.num_variables)
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = attempts = 0
    while done < trials:
        attempts += 1
        if attempts > 10 * trials:
            raise np.linalg.LinAlgError("too many singular draws in verify_linearization")
        xi = [random_hermitian(rng, size) for _ in range(m)]
        try:
            direct = np.linalg.inv(f.evaluate(xi, size) - z * np.eye(f.n * size))
            big = design.pencil(xi[: design.m] or [np.zeros((size, size))])
            big = big - np.kron(np.eye(size), design.theta + z * design.e)
            inverse = np.linalg.inv(big)
        except np.linalg.LinAlgError:
            continue
        idx = [p * design.s + q for q in range(design.n) for p in range(size)]
        corner = inverse[np.ix_(idx, idx)]
        worst = max(worst, float(np.linalg.norm(corner - direct)))
        done += 1
    return worst <= 1e-9, worst


# ----------------------------------------------------------------------------
# covariance data


@dataclass(frozen=True, eq=False)
class CovarianceMap:
    """``zeta -> sum_l a_l zeta a_l``."""

    s: int
    coefficients: tuple[np.ndarray, ...]

    def __call__(self, zeta: np.ndarray) -> np.ndarray:
        out = np.zeros((self.s, self.s), dtype=complex)
        for a in self.coefficients:
            out += a @ zeta @ a
        return out

    @cached_property
    def matrix(self) -> np.ndarray:
        out = np.zeros((self.s**2, self.s**2), dtype=complex)
        for a in self.coefficients:
            out += np.kron(a, a.T)
        return out

    @cached_property
    def norm(self) -> float:
        # completely positive, so the norm is attained at the unit
        return float(np.linalg.norm(self(np.eye(self.s)), 2))


def covariance_map(design: SaltDesign) -> CovarianceMap:
    return CovarianceMap(design.s, tuple(np.asarray(a, dtype=complex) for a in design.coefficients))


def covariance_tensor(design: SaltDesign) -> np.ndarray:
    """``sum_l (-1)^l a_l (x) a_l`` as an ``s^2 x s^2`` Kronecker matrix."""
    out = np.zeros((design.s**2, design.s**2), dtype=complex)
    for ell, a in enumerate(design.coefficients, start=1):
        out += (-1) ** ell * np.kron(a, a)
    return out


def swap_factors(t: np.ndarray, s: int) -> np.ndarray:
    """``x (x) y -> y (x) x`` on Kronecker matrices."""
    return t.reshape(s, s, s, s).transpose(1, 0, 3, 2).reshape(s * s, s * s)


def half_transpose(t: np.ndarray, s: int) -> np.ndarray:
    """``x (x) y -> x (x) y^T``."""
    return t.reshape(s, s, s, s).transpose(0, 3, 2, 1).reshape(s * s, s * s)


def bullet(t: np.ndarray, s: int) -> np.ndarray:
    """Operator matrix of ``zeta -> sum x zeta y`` for ``t = sum x (x) y``.

    With row-major flattening this is the Kronecker matrix of ``x (x) y^T``,
    which is the half transpose of ``t``.
    """
    return half_transpose(t, s)


def apply_bullet(t: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    s = zeta.shape[0]
    return (bullet(t, s) @ zeta.reshape(-1)).reshape(s, s)


# ----------------------------------------------------------------------------
# underline construction

_E = {(i, j): np.eye(3)[:, [i]] @ np.eye(3)[[j], :] for i in range(3) for j in range(3)}


def _underline_element(x: np.ndarray, sign: float = 1.0) -> np.ndarray:
    """``x (x) 1 (x) e11 + 1 (x) x (x) e22 + sign * 1 (x) x^T (x) e33``.

    The three-by-three factor is stored outermost: ``kron(E_ij, A)``.
    """
    one = np.eye(x.shape[0])
    return (
        np.kron(_E[0, 0], np.kron(x, one))
        + np.kron(_E[1, 1], np.kron(one, x))
        + sign * np.kron(_E[2, 2], np.kron(one, x.T))
    )


def diamond(s: int) -> np.ndarray:
    return np.kron(_E[0, 1] + _E[0, 2], np.eye(s * s))


def underline_lambda(lam: np.ndarray) -> np.ndarray:
    return _underline_element(lam)


def underline(design: SaltDesign) -> SaltDesign:
    """The design ``(S (x) S (x) M_3, L_bar, theta_bar + diamond, e_bar)``.

    ``L_bar`` has coefficients ``a_l (x) 1 (x) e11 + 1 (x) a_l (x) e22 +
    (-1)^l 1 (x) a_l^T (x) e33``: the sign comes from transposing
    ``X_l`` inside the third summand.  Block size is ``3 s^2``.
    """
    s = design.s
    coefficients = tuple(
        _underline_element(a, (-1.0) ** ell) for ell, a in enumerate(design.coefficients, start=1)
    )
    theta = _underline_element(design.theta) + diamond(s)
    e = _underline_element(design.e)
    return SaltDesign(
        s=3 * s * s,
        n=int(round(np.trace(e).real)),
        coefficients=coefficients,
        theta=theta,
        e=e,
        meta={"underline_of": s},
    )


def coarse_block(x: np.ndarray, s: int, i: int, j: int) -> np.ndarray:
    k = s * s
    return x[i * k : (i + 1) * k, j * k : (j + 1) * k]


def partial_derivations(s: int):
    """Return ``(d1, d2)`` acting on underlined-algebra elements.

    ``d1`` takes the (1,2) coarse block ``A`` to the operator matrix of
    ``A``'s bullet map; ``d2`` takes the (1,3) coarse block to its half
    transpose.
    """

    def d1(x: np.ndarray) -> np.ndarray:
        return bullet(coarse_block(x, s, 0, 1), s)

    def d2(x: np.ndarray) -> np.ndarray:
        return half_transpose(coarse_block(x, s, 0, 2), s)

    return d1, d2
