import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import hermitian, parity_matrices, polys
from freespec.ncpoly import (
    MatrixPolynomial,
    NcPolynomial,
    PolynomialSyntaxError,
    format_matrix,
    format_poly,
    parse,
    parse_poly,
)

X1 = NcPolynomial.variable(1)
X2 = NcPolynomial.variable(2)


class TestParse:
    def test_single_variable(self):
        f = parse("x1")
        assert f.n == 1
        assert f[0, 0] == X1

    def test_anticommutator(self):
        p = parse("x1*x2 + x2*x1")[0, 0]
        assert p.terms == {(1, 2): 1, (2, 1): 1}

    def test_adjoint_reverses_words(self):
        assert parse_poly("adj(x1*x2)") == X2 * X1

    def test_complex_literal_and_power(self):
        p = parse_poly("(2+1i)*x1^2 - 0.5")
        assert p.terms == {(1, 1): 2 + 1j, (): -0.5}

    def test_parenthesised_sum_distributes(self):
        assert parse_poly("(x1 + x2)*x1") == X1 * X1 + X2 * X1

    def test_unary_minus(self):
        assert parse_poly("-x1 + -2") == -X1 - 2

    def test_scalar_with_size(self):
        f = parse("x1", n=2)
        assert f.n == 2 and f[0, 1].is_zero() and f[1, 1] == X1

    def test_matrix_json(self):
        f = parse('{"n": 2, "entries": [["x1", "x2"], ["x2", "0"]]}')
        assert f.n == 2 and f[0, 1] == X2 and f[1, 1].is_zero()

    @pytest.mark.parametrize(
        "text, position",
        [("x0", 0), ("x1 +", 4), ("x1 ** x2", 4), ("(x1", 3), ("x1 ^ y", 5), ("2 x1", 2)],
    )
    def test_syntax_errors_report_position(self, text, position):
        with pytest.raises(PolynomialSyntaxError) as err:
            parse(text)
        assert err.value.position == position

    def test_non_square_grid(self):
        with pytest.raises(ValueError):
            parse('{"n": 2, "entries": [["x1", "x2"], ["x2"]]}')

    @settings(max_examples=60, deadline=None)
    @given(polys())
    def test_print_parse_round_trip(self, p):
        once = parse_poly(format_poly(p))
        assert once.close_to(p, 1e-12)
        assert parse_poly(format_poly(once)) == once

    def test_matrix_round_trip(self):
        f = parse('{"n": 2, "entries": [["x1*x2", "(1-2i)"], ["(1+2i)", "x2*x1"]]}')
        assert parse(format_matrix(f)) == f


class TestAlgebra:
    def test_zero_coefficients_pruned(self):
        p = X1 * X2 - X1 * X2
        assert p.is_zero() and p.terms == {}

    def test_adjoint_conjugates_and_reverses(self):
        p = (2 + 1j) * X1 * X2
        assert p.adjoint() == (2 - 1j) * X2 * X1

    def test_matrix_adjoint_transposes_grid(self):
        f = MatrixPolynomial.from_grid([[0, X1], [0, 0]])
        assert f.adjoint() == MatrixPolynomial.from_grid([[0, 0], [X1, 0]])

    @pytest.mark.parametrize(
        "p, expected", [(X1, -X1), (X2, X2), (X1 * X2, -(X2 * X1))]
    )
    def test_transpose_action(self, p, expected):
        assert p.transpose_action() == expected

    @settings(max_examples=60, deadline=None)
    @given(polys())
    def test_involutions(self, p):
        assert p.adjoint().adjoint() == p
        assert p.transpose_action().transpose_action() == p

    def test_degree(self):
        assert parse_poly("x1*x2*x1 + 3").degree == 3
        assert NcPolynomial.constant(2).degree == 0


class TestEvaluate:
    def test_identity_input(self):
        assert np.allclose(X1.evaluate([np.eye(2)]), np.eye(2))

    def test_commutator_of_commuting_inputs(self):
        f = X1 * X2 - X2 * X1
        out = f.evaluate([np.diag([1.0, 2.0]), np.diag([3.0, -1.0])])
        assert np.allclose(out, 0)

    def test_square_of_swap(self):
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.allclose((X1 * X1).evaluate([a]), np.eye(2))

    def test_missing_variable(self):
        with pytest.raises(ValueError):
            (X1 * X2).evaluate([np.eye(2)])

    def test_inconsistent_sizes(self):
        with pytest.raises(ValueError):
            (X1 + X2).evaluate([np.eye(2), np.eye(3)])

    def test_matrix_blocks(self):
        f = MatrixPolynomial.from_grid([[X1, 1], [1, X2]])
        a, b = np.diag([1.0, 2.0]), np.diag([3.0, 4.0])
        out = f.evaluate([a, b])
        assert np.allclose(out[:2, :2], a) and np.allclose(out[2:, 2:], b)
        assert np.allclose(out[:2, 2:], np.eye(2))

    @settings(max_examples=40, deadline=None)
    @given(polys(max_len=3), polys(max_len=3), st.integers(0, 2**31))
    def test_homomorphism(self, p, q, seed):
        rng = np.random.default_rng(seed)
        xs = [hermitian(rng, 3) for _ in range(3)]
        fp, fq = p.evaluate(xs, 3), q.evaluate(xs, 3)
        scale = 1 + np.linalg.norm(fp) * np.linalg.norm(fq)
        assert np.linalg.norm((p * q).evaluate(xs, 3) - fp @ fq) <= 1e-12 * scale
        assert np.linalg.norm((p + q).evaluate(xs, 3) - fp - fq) <= 1e-12 * scale

    @settings(max_examples=40, deadline=None)
    @given(polys(), st.integers(0, 2**31))
    def test_star_compatibility(self, p, seed):
        rng = np.random.default_rng(seed)
        xs = [hermitian(rng, 3) for _ in range(3)]
        assert np.allclose(p.adjoint().evaluate(xs, 3), p.evaluate(xs, 3).conj().T, atol=1e-11)

    @settings(max_examples=40, deadline=None)
    @given(polys(), st.integers(0, 2**31))
    def test_transpose_compatibility(self, p, seed):
        xs = parity_matrices(np.random.default_rng(seed), 3, 3)
        assert np.allclose(p.transpose_action().evaluate(xs, 3), p.evaluate(xs, 3).T, atol=1e-11)
