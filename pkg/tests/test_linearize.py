import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hermitian, self_adjoint_matrix_polys
from freespec.linearize import (
    NotSelfAdjointError,
    SaltDesign,
    apply_bullet,
    bullet,
    covariance_map,
    covariance_tensor,
    half_transpose,
    linearize,
    partial_derivations,
    swap_factors,
    underline,
    verify_linearization,
)
from freespec.ncpoly import parse


class TestLinearize:
    def test_degree_one_passthrough(self):
        d = linearize(parse("x1"))
        assert (d.s, d.n, d.m) == (1, 1, 1)
        assert np.allclose(d.coefficients[0], [[1]])
        assert np.allclose(d.theta, 0) and np.allclose(d.e, 1)

    def test_square_uses_two_blocks(self):
        d = linearize(parse("x1^2"))
        assert d.s == 2
        b, dd = d.coefficients[0][0, 1], -d.theta[1, 1]
        # Schur complement -b d^{-1} b* reproduces the square
        assert np.isclose(-b * np.conj(b) / dd, 1.0)
        ok, dev = verify_linearization(parse("x1^2"), d)
        assert ok and dev <= 1e-10

    def test_anticommutator_size(self):
        f = parse("x1*x2 + x2*x1")
        d = linearize(f)
        assert d.s <= 5
        assert verify_linearization(f, d)[0]

    def test_passthrough_verifies_exactly(self):
        f = parse("x1")
        assert verify_linearization(f, linearize(f))[1] <= 1e-13

    def test_rejects_non_self_adjoint(self):
        with pytest.raises(NotSelfAdjointError):
            linearize(parse("x1*x2"))

    def test_matrix_valued(self):
        f = parse('{"n": 2, "entries": [["x1^2", "x1*x2"], ["x2*x1", "x2 - 1"]]}')
        d = linearize(f)
        assert d.n == 2
        assert verify_linearization(f, d, seed=3)[1] <= 1e-9

    def test_constant(self):
        d = linearize(parse("2.5"))
        assert d.m == 0 and np.allclose(d.theta, -2.5)

    def test_design_invariants(self):
        d = linearize(parse("x1*x2*x1 + x3^3 - x2"))
        for a in d.coefficients:
            assert np.abs(a - a.conj().T).max() <= 1e-12
        assert np.allclose(d.e @ d.e, d.e) and np.allclose(d.e, d.e.conj().T)
        assert round(np.trace(d.e).real) == d.n
        imag = np.linalg.norm((d.theta - d.theta.conj().T) / 2j, 2)
        assert d.cutoff >= imag + 4 * (1 + covariance_map(d).norm) - 1e-12

    def test_json_round_trip(self):
        d = linearize(parse("(1+2i)*x1*x2 + (1-2i)*x2*x1 + x1"))
        back = SaltDesign.from_json(d.to_json())
        assert back.same_as(d)
        assert back.to_json() == d.to_json()

    @settings(max_examples=50, deadline=None)
    @given(self_adjoint_matrix_polys(), st.integers(0, 1000))
    def test_schur_consistency(self, f, seed):
        d = linearize(f)
        if d.n != f.n:
            pytest.skip("degenerate")
        ok, dev = verify_linearization(f, d, trials=5, seed=seed)
        assert ok, dev


class TestCovariance:
    def test_scalar_x1(self):
        d = linearize(parse("x1"))
        zeta = np.array([[2 + 1j]])
        assert np.allclose(covariance_map(d)(zeta), zeta)
        assert np.allclose(covariance_tensor(d), [[-1]])

    def test_scalar_x2(self):
        d = linearize(parse("x2"))
        assert np.allclose(covariance_tensor(d), [[1]])

    def test_sum_cancels(self):
        assert np.allclose(covariance_tensor(linearize(parse("x1 + x2"))), 0)

    def test_square_conjugates(self, rng):
        d = linearize(parse("x1^2"))
        a = d.coefficients[0]
        assert np.allclose(np.abs(a), [[0, 1], [1, 0]])
        zeta = hermitian(rng, 2)
        assert np.allclose(covariance_map(d)(zeta), a @ zeta @ a)

    def test_zero_coefficient(self):
        d = SaltDesign(1, 1, (np.zeros((1, 1)),), np.zeros((1, 1)), np.eye(1))
        assert np.allclose(covariance_map(d)(np.eye(1)), 0)

    def test_matrix_matches_action(self, rng):
        d = linearize(parse("x1*x2 + x2*x1 + x3"))
        phi = covariance_map(d)
        zeta = rng.standard_normal((d.s, d.s)) + 1j * rng.standard_normal((d.s, d.s))
        assert np.allclose(phi.matrix @ zeta.reshape(-1), phi(zeta).reshape(-1))

    def test_positive_map(self, rng):
        d = linearize(parse("x1*x2*x1 + x2^2 + x1"))
        phi = covariance_map(d)
        for _ in range(100):
            b = rng.standard_normal((d.s, d.s)) + 1j * rng.standard_normal((d.s, d.s))
            assert np.linalg.eigvalsh(phi(b @ b.conj().T)).min() >= -1e-10

    def test_tensor_swap_symmetric(self):
        d = linearize(parse("x1*x2 + x2*x1 + x3^2"))
        psi = covariance_tensor(d)
        assert np.array_equal(swap_factors(psi, d.s), psi)


class TestBulletAndUnderline:
    def test_bullet_on_basis(self, rng):
        s = 3
        x, y = rng.standard_normal((s, s)), rng.standard_normal((s, s))
        t = np.kron(x, y)
        for i in range(s):
            for j in range(s):
                zeta = np.zeros((s, s))
                zeta[i, j] = 1
                assert np.allclose(apply_bullet(t, zeta), x @ zeta @ y)

    def test_half_transpose_involution(self, rng):
        t = rng.standard_normal((9, 9))
        assert np.array_equal(half_transpose(half_transpose(t, 3), 3), t)
        assert np.array_equal(bullet(t, 3), half_transpose(t, 3))

    def test_block_size(self):
        for text in ("x1", "x1^2", "x1*x2 + x2*x1"):
            d = linearize(parse(text))
            assert underline(d).s == 3 * d.s**2

    def test_scalar_underline(self):
        u = underline(linearize(parse("x1")))
        assert np.allclose(u.coefficients[0], np.diag([1, 1, -1]))
        assert np.allclose(u.theta, [[0, 1, 1], [0, 0, 0], [0, 0, 0]])
        assert np.allclose(u.e, np.eye(3))

    def test_norm_identity(self, rng):
        d = linearize(parse("x1*x2 + x2*x1 + x1^2"))
        u = underline(d)
        for _ in range(5):
            xs = [hermitian(rng, 3) for _ in range(d.m)]
            lhs = np.linalg.norm(u.pencil(xs), 2)
            rhs = np.linalg.norm(d.pencil(xs), 2)
            assert abs(lhs - rhs) <= 1e-10 * max(1, rhs)

    def test_partial_derivations(self, rng):
        s = 2
        x, y = rng.standard_normal((s, s)), rng.standard_normal((s, s))
        d1, d2 = partial_derivations(s)
        big = np.zeros((3 * s * s, 3 * s * s))
        big[: s * s, 2 * s * s :] = np.kron(x, y)
        assert np.allclose(d2(big), np.kron(x, y.T))
        assert np.allclose(d1(big), 0)
        diag_only = np.kron(np.diag([1, 0, 0]), np.kron(x, y))
        assert np.allclose(d1(diag_only), 0)
