import numpy as np
import pytest
from hypothesis import strategies as st

from freespec.ncpoly import MatrixPolynomial, NcPolynomial


def hermitian(rng, size):
    g = (rng.standard_normal((size, size)) + 1j * rng.standard_normal((size, size))) / np.sqrt(2)
    return (g + g.conj().T) / 2


def parity_matrices(rng, size, m):
    """Hermitian matrices with ``x_l^T = (-1)^l x_l``."""
    out = []
    for ell in range(1, m + 1):
        a = rng.standard_normal((size, size))
        out.append(1j * (a - a.T) if ell % 2 else a + a.T)
    return out


coefficients = st.complex_numbers(max_magnitude=3, allow_nan=False, allow_infinity=False).map(
    lambda c: complex(round(c.real, 3), round(c.imag, 3))
)


def words(max_var=3, max_len=3):
    return st.lists(st.integers(1, max_var), max_size=max_len).map(tuple)


def polys(max_var=3, max_len=3, max_terms=4):
    return st.dictionaries(words(max_var, max_len), coefficients, max_size=max_terms).map(
        NcPolynomial.from_terms
    )


@st.composite
def self_adjoint_matrix_polys(draw, max_n=3, max_var=3, max_len=4, max_terms=3):
    n = draw(st.integers(1, max_n))
    grid = [[draw(polys(max_var, max_len, max_terms)) for _ in range(n)] for _ in range(n)]
    f = MatrixPolynomial.from_grid(grid)
    return (f + f.adjoint()) * 0.5


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
