"""Spectra of polynomials in free semicircular variables and their Wigner-matrix approximations."""

__version__ = "0.1.0"
