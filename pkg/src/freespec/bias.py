"""The universal O(1/N) correction to the expected empirical Stieltjes transform.

Elements of ``S^{(x)k}`` appear in two forms.  Coordinate arrays of shape
``(s, s) * k`` hold general tensors, with axes ``(row_1, col_1, ..., row_k,
col_k)``; the shuffle operations act on these.  The moment tensors of the
Wigner model are weighted sums of powers ``sum_l w_l a_l^{(x)k}`` and are
kept in that factored form (:class:`PowerSum`) so that pairing them with
``G^{(x)k}`` costs a few matrix products.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .linearize import SaltDesign, apply_bullet, covariance_map, covariance_tensor
from .sdsolver import DEFAULT_MIN_IMAG, derivative_operator, secondary_g, solve_design


# ----------------------------------------------------------------------------
# shuffle operations on coordinate arrays


def _factor_count(x: np.ndarray) -> int:
    if x.ndim % 2 or x.ndim == 0 or len(set(x.shape)) != 1:
        raise ValueError(f"not a coordinate array of a tensor power of square matrices: {x.shape}")
    return x.ndim // 2


def shuffle_bracket(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``[x_1 (x) .. (x) x_k, y_1 (x) .. (x) y_k] = x_1 (x) y_1 (x) .. (x) x_k (x) y_k``."""
    k = _factor_count(x)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    outer = np.multiply.outer(x, y)
    order = []
    for i in range(k):
        order += [2 * i, 2 * i + 1, 2 * k + 2 * i, 2 * k + 2 * i + 1]
    return outer.transpose(order)


def chain_product(x: np.ndarray) -> np.ndarray:
    """``x_1 (x) .. (x) x_k -> x_1 x_2 .. x_k`` extended linearly."""
    k = _factor_count(x)
    for _ in range(k - 1):
        x = np.trace(x, axis1=1, axis2=2)
    return x


def shuffle_contract(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``<x_1 (x) .. (x) x_k, y_1 (x) .. (x) y_k> = x_1 y_1 .. x_k y_k``.

    Builds the full bracket, so memory grows like ``s^(4k)``; meant for small
    blocks.  :func:`pair_with_power` handles the common case ``y = g^{(x)k}``.
    """
    return chain_product(shuffle_bracket(x, y))


def tensor_power(g: np.ndarray, k: int) -> np.ndarray:
    out = np.asarray(g)
    for _ in range(k - 1):
        out = np.multiply.outer(out, g)
    return out


def pair_with_power(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """``<x, g^{(x)k}>`` without forming the bracket."""
    k = _factor_count(x)
    for _ in range(k - 1):
        x = np.tensordot(x, g, axes=([1], [0]))
        x = np.trace(x, axis1=1, axis2=x.ndim - 1)
    return x @ g


def kron_to_coordinates(t: np.ndarray, s: int) -> np.ndarray:
    """Kronecker matrix of ``sum x (x) y`` to its ``(s, s, s, s)`` coordinate array."""
    return t.reshape(s, s, s, s).transpose(0, 2, 1, 3)


# ----------------------------------------------------------------------------
# model moments


@dataclass(frozen=True, eq=False)
class PowerSum:
    """``sum_l weights[l] * factors[l]^{(x)k}``."""

    k: int
    weights: tuple[complex, ...]
    factors: tuple[np.ndarray, ...]

    @property
    def s(self) -> int:
        return self.factors[0].shape[0] if self.factors else 0

    def pair(self, g: np.ndarray) -> np.ndarray:
        """``<self, g^{(x)k}> = sum_l w_l (a_l g)^k``."""
        out = np.zeros_like(g, dtype=complex)
        for w, a in zip(self.weights, self.factors):
            if w != 0:
                out += w * np.linalg.matrix_power(a @ g, self.k)
        return out

    @property
    def data(self) -> np.ndarray:
        """Coordinate array, shape ``(s, s) * k``."""
        s = self.s
        out = np.zeros((s, s) * self.k, dtype=complex)
        for w, a in zip(self.weights, self.factors):
            out += w * tensor_power(a, self.k)
        return out

    def is_zero(self) -> bool:
        return all(w == 0 for w in self.weights)


@dataclass(frozen=True)
class ScalarMoments:
    """Moments of a scalar entry ``xi``: ``E|xi|^2``, ``E|xi|^4`` and ``E xi^2``."""

    abs2: float
    abs4: float
    square: complex

    @property
    def fourth_cumulant(self) -> float:
        return float(self.abs4 - 2 * self.abs2**2 - abs(self.square) ** 2)


@dataclass(frozen=True, eq=False)
class FourthCumulantTensor:
    """``C4(Y)`` for ``Y`` a sum of independent scalar entries times fixed Hermitian blocks."""

    tensor: PowerSum

    @property
    def s(self) -> int:
        return self.tensor.s

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(abs(w) <= tol for w in self.tensor.weights)


def fourth_cumulant(
    coefficients: Sequence[np.ndarray], entries: Sequence[ScalarMoments]
) -> FourthCumulantTensor:
    """Fourth cumulant tensor of ``Y = sum_l xi_l a_l`` with independent mean-zero ``xi_l``.

    For a single term ``xi a`` the four expectations collapse to
    ``(E|xi|^4 - 2 (E|xi|^2)^2 - |E xi^2|^2) a* (x) a (x) a* (x) a``;
    independent terms add.  The blocks ``a_l`` are Hermitian here.
    """
    if len(coefficients) != len(entries):
        raise ValueError("one scalar law per coefficient is required")
    weights = tuple(e.fourth_cumulant for e in entries)
    return FourthCumulantTensor(PowerSum(4, weights, tuple(np.asarray(a) for a in coefficients)))


def fourth_cumulant_scalar_monte_carlo(draws: np.ndarray) -> float:
    """The scalar cumulant from the four defining expectations, estimated from samples.

    The independent copy is the sample sequence shifted by one.
    """
    y = np.asarray(draws, dtype=complex)
    z = np.roll(y, 1)
    yc, zc = y.conj(), z.conj()
    return float(
        np.real(
            np.mean(yc * y * yc * y)
            - np.mean(yc * y * zc * z)
            - np.mean(yc * z * zc * y)
            - np.mean(yc * z * yc * z)
        )
    )


@dataclass(frozen=True)
class ModelMoments:
    """Per-variable moments of the block Wigner model.

    ``diagonal_variance[l-1]`` and ``diagonal_third[l-1]`` are ``E d^2`` and
    ``E d^3`` for the diagonal entries of ``Xi_l``; ``kappa[l-1]`` is the
    scalar fourth cumulant of its off-diagonal entries.
    """

    diagonal_variance: tuple[float, ...]
    diagonal_third: tuple[float, ...]
    kappa: tuple[float, ...]

    @classmethod
    def gaussian(cls, m: int) -> ModelMoments:
        return cls(
            tuple(1.0 if ell % 2 == 0 else 0.0 for ell in range(1, m + 1)),
            (0.0,) * m,
            (0.0,) * m,
        )


@dataclass(frozen=True, eq=False)
class DiagonalMoments:
    m2: PowerSum
    m3: PowerSum


def diagonal_moments(design: SaltDesign, moments: ModelMoments) -> DiagonalMoments:
    """``E X(i,i)^{(x)2}`` and ``E X(i,i)^{(x)3}`` for ``X = L(Xi)``."""
    a = tuple(np.asarray(x, dtype=complex) for x in design.coefficients)
    _check_moments(design, moments)
    return DiagonalMoments(
        PowerSum(2, tuple(moments.diagonal_variance[: design.m]), a),
        PowerSum(3, tuple(moments.diagonal_third[: design.m]), a),
    )


def model_fourth_cumulant(design: SaltDesign, moments: ModelMoments) -> FourthCumulantTensor:
    _check_moments(design, moments)
    a = tuple(np.asarray(x, dtype=complex) for x in design.coefficients)
    return FourthCumulantTensor(PowerSum(4, tuple(moments.kappa[: design.m]), a))


def _check_moments(design: SaltDesign, moments: ModelMoments) -> None:
    for name in ("diagonal_variance", "diagonal_third", "kappa"):
        if len(getattr(moments, name)) < design.m:
            raise ValueError(f"model moments give {name} for fewer than {design.m} variables")


# ----------------------------------------------------------------------------
# the correction


def covariance_pairing(design: SaltDesign, g: np.ndarray, g_check: np.ndarray) -> np.ndarray:
    """``<[Psi, Psi], [G_check, G (x) G]>`` with ``Psi = sum (-1)^l a_l (x) a_l``.

    Term by term this is ``a_l bullet(G_check)(a_k G a_l) a_k G`` with sign
    ``(-1)^(l+k)``.
    """
    out = np.zeros_like(g, dtype=complex)
    a = design.coefficients
    for ell, al in enumerate(a, start=1):
        for k, ak in enumerate(a, start=1):
            sign = (-1.0) ** (ell + k)
            out += sign * al @ apply_bullet(g_check, ak @ g @ al) @ ak @ g
    return out


def unwrapped_correction(
    design: SaltDesign,
    moments: ModelMoments,
    N: int,
    g: np.ndarray,
    g_check: np.ndarray,
) -> np.ndarray:
    """The correction before the derivative is applied.

    ``<[Psi,Psi],[G_check,G^2]> - Phi(G) G + <m2, G^2> - N^{-1/2} <m3, G^3>
    + (1 - 1/N) <C4, G^4>``: the diagonal sums contribute ``N`` equal terms
    and the off-diagonal one ``N (N - 1)``.
    """
    if N < 1:
        raise ValueError("N must be positive")
    phi = covariance_map(design)
    diag = diagonal_moments(design, moments)
    c4 = model_fourth_cumulant(design, moments)
    return (
        covariance_pairing(design, g, g_check)
        - phi(g) @ g
        + diag.m2.pair(g)
        - diag.m3.pair(g) / np.sqrt(N)
        + (N - 1) / N * c4.tensor.pair(g)
    )


def universal_correction(
    design: SaltDesign,
    moments: ModelMoments,
    N: int,
    lam: np.ndarray,
    *,
    g: np.ndarray | None = None,
    min_imag: float = DEFAULT_MIN_IMAG,
) -> np.ndarray:
    """``G'(hat(Bias) G^{-1})`` at ``Lam``.

    ``g`` may be supplied when the SD solution at ``lam`` is already known
    (for instance ``G(Lam)^*`` at ``Lam^*``); otherwise it is solved for,
    which requires ``lam = theta + z e`` with ``Im z`` above the floor.
    """
    lam = np.asarray(lam, dtype=complex)
    if g is None:
        diff = lam - design.theta
        z = complex(np.trace(design.e.conj().T @ diff) / np.trace(design.e).real)
        if not np.allclose(diff, z * design.e, atol=1e-12):
            raise ValueError("pass g explicitly for points off the line theta + z e")
        g = solve_design(design, z, min_imag=min_imag).g
    phi = covariance_map(design)
    g_check = secondary_g(covariance_tensor(design), g)
    hat = unwrapped_correction(design, moments, N, g, g_check)
    s = design.s
    wrapped = derivative_operator(phi, g) @ (hat @ np.linalg.inv(g)).reshape(-1)
    return wrapped.reshape(s, s)


def bias_scalar(
    design: SaltDesign,
    z: complex,
    N: int,
    moments: ModelMoments | None = None,
    *,
    min_imag: float = DEFAULT_MIN_IMAG,
) -> complex:
    """``tr(e Bias(theta + z e)) / tr(e)``; Gaussian model moments by default."""
    if design.m == 0:
        return 0j
    moments = moments if moments is not None else ModelMoments.gaussian(design.m)
    lam = design.theta + complex(z) * design.e
    corr = universal_correction(design, moments, N, lam, min_imag=min_imag)
    return complex(np.trace(design.e @ corr) / np.trace(design.e).real)
