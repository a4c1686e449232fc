"""Noncommutative polynomials in self-adjoint variables X_1, X_2, ...

Polynomials are sparse maps from words (tuples of positive variable indices)
to complex coefficients.  Matrix polynomials are square grids of them.  A small
recursive-descent parser reads the text form used by the command line::

    x1*x2 + x2*x1
    (2.0+1.0i)*x1^2 - adj(x1*x2)
    {"n": 2, "entries": [["x1", "x2"], ["x2", "0"]]}
"""

from __future__ import annotations

import json
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Union

import numpy as np

Word = tuple[int, ...]
Scalar = Union[int, float, complex]

ZERO_TOL = 1e-14


def _clean(terms: Mapping[Word, complex]) -> tuple[tuple[Word, complex], ...]:
    kept = ((w, complex(c)) for w, c in terms.items() if abs(c) > ZERO_TOL)
    return tuple(sorted(kept, key=lambda item: (len(item[0]), item[0])))


@dataclass(frozen=True, eq=False)
class NcPolynomial:
    """Immutable sparse noncommutative polynomial.

    Terms are kept in canonical order: by degree, then lexicographically.
    Coefficients with modulus at most ``ZERO_TOL`` are dropped.
    """

    items: tuple[tuple[Word, complex], ...] = ()

    @classmethod
    def from_terms(cls, terms: Mapping[Word, Scalar]) -> NcPolynomial:
        for word in terms:
            if any(int(v) < 1 for v in word):
                raise ValueError(f"variable indices must be >= 1, got word {word}")
        return cls(_clean({tuple(int(v) for v in w): c for w, c in terms.items()}))

    @classmethod
    def constant(cls, c: Scalar) -> NcPolynomial:
        return cls.from_terms({(): c})

    @classmethod
    def variable(cls, index: int) -> NcPolynomial:
        return cls.from_terms({(index,): 1.0})

    @property
    def terms(self) -> dict[Word, complex]:
        return dict(self.items)

    def coefficient(self, word: Word) -> complex:
        return self.terms.get(tuple(word), 0j)

    @property
    def degree(self) -> int:
        """Largest word length; the zero polynomial has degree -1."""
        return max((len(w) for w, _ in self.items), default=-1)

    @property
    def num_variables(self) -> int:
        return max((max(w) for w, _ in self.items if w), default=0)

    def is_zero(self) -> bool:
        return not self.items

    def __add__(self, other: NcPolynomial | Scalar) -> NcPolynomial:
        other = _as_poly(other)
        acc = self.terms
        for w, c in other.items:
            acc[w] = acc.get(w, 0j) + c
        return NcPolynomial(_clean(acc))

    __radd__ = __add__

    def __neg__(self) -> NcPolynomial:
        return NcPolynomial(tuple((w, -c) for w, c in self.items))

    def __sub__(self, other: NcPolynomial | Scalar) -> NcPolynomial:
        return self + (-_as_poly(other))

    def __rsub__(self, other: Scalar) -> NcPolynomial:
        return _as_poly(other) - self

    def __mul__(self, other: NcPolynomial | Scalar) -> NcPolynomial:
        other = _as_poly(other)
        acc: dict[Word, complex] = {}
        for w1, c1 in self.items:
            for w2, c2 in other.items:
                w = w1 + w2
                acc[w] = acc.get(w, 0j) + c1 * c2
        return NcPolynomial(_clean(acc))

    def __rmul__(self, other: Scalar) -> NcPolynomial:
        return _as_poly(other) * self

    def __pow__(self, k: int) -> NcPolynomial:
        if k < 0:
            raise ValueError("negative powers are not polynomials")
        out = NcPolynomial.constant(1.0)
        for _ in range(k):
            out = out * self
        return out

    def adjoint(self) -> NcPolynomial:
        return NcPolynomial(_clean({w[::-1]: c.conjugate() for w, c in self.items}))

    def transpose_action(self) -> NcPolynomial:
        """Linear anti-automorphism sending X_l to (-1)^l X_l."""
        return NcPolynomial(
            _clean({w[::-1]: c * (-1) ** (sum(w) % 2) for w, c in self.items})
        )

    def close_to(self, other: NcPolynomial, tol: float = 1e-12) -> bool:
        diff = self - other
        return all(abs(c) <= tol for _, c in diff.items)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, (int, float, complex)):
            other = NcPolynomial.constant(other)
        if not isinstance(other, NcPolynomial):
            return NotImplemented
        return self.items == other.items

    def __hash__(self) -> int:
        return hash(self.items)

    def __str__(self) -> str:
        return format_poly(self)

    def __repr__(self) -> str:
        return f"NcPolynomial({format_poly(self)!r})"

    def evaluate(self, xs, size: int | None = None) -> np.ndarray:
        """Substitute matrices for the variables.

        ``xs`` is either a sequence (``xs[l-1]`` stands for X_l) or a mapping
        from variable index to matrix.  ``size`` is only needed when the
        polynomial is constant and ``xs`` is empty.
        """
        mats = _variable_lookup(xs)
        s = _common_size(mats, self, size)
        return _evaluate_entry(self, mats, s, {})


def _as_poly(x) -> NcPolynomial:
    if isinstance(x, NcPolynomial):
        return x
    if isinstance(x, (int, float, complex, np.number)):
        return NcPolynomial.constant(complex(x))
    raise TypeError(f"cannot combine NcPolynomial with {type(x).__name__}")


def _variable_lookup(xs) -> dict[int, np.ndarray]:
    if isinstance(xs, Mapping):
        return {int(k): np.asarray(v) for k, v in xs.items()}
    return {i + 1: np.asarray(v) for i, v in enumerate(xs)}


def _common_size(mats: dict[int, np.ndarray], poly, size: int | None) -> int:
    shapes = {m.shape for m in mats.values()}
    if len(shapes) > 1:
        raise ValueError(f"inconsistent matrix sizes: {sorted(shapes)}")
    for m in mats.values():
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"variables must be square matrices, got shape {m.shape}")
    missing = set(range(1, poly.num_variables + 1)) - set(mats)
    needed = {v for w, _ in _all_items(poly) for v in w}
    if needed & missing:
        raise ValueError(f"no matrix supplied for variables {sorted(needed & missing)}")
    if shapes:
        return next(iter(shapes))[0]
    if size is None:
        raise ValueError("matrix size unknown: pass size= for constant polynomials")
    return size


def _all_items(poly):
    if isinstance(poly, NcPolynomial):
        return poly.items
    return [item for row in poly.entries for p in row for item in p.items]


def _evaluate_entry(poly: NcPolynomial, mats, s: int, cache: dict) -> np.ndarray:
    dtype = np.result_type(complex, *[m.dtype for m in mats.values()])
    out = np.zeros((s, s), dtype=dtype)
    for word, c in poly.items:
        out += c * _word_product(word, mats, s, cache)
    return out


def _word_product(word: Word, mats, s: int, cache: dict) -> np.ndarray:
    if word in cache:
        return cache[word]
    if not word:
        value = np.eye(s)
    elif len(word) == 1:
        value = mats[word[0]]
    else:
        value = _word_product(word[:-1], mats, s, cache) @ mats[word[-1]]
    cache[word] = value
    return value


@dataclass(frozen=True, eq=False)
class MatrixPolynomial:
    """Square matrix whose entries are noncommutative polynomials."""

    entries: tuple[tuple[NcPolynomial, ...], ...]

    def __post_init__(self):
        n = len(self.entries)
        if n == 0 or any(len(row) != n for row in self.entries):
            raise ValueError("entry grid must be square and non-empty")

    @classmethod
    def from_grid(cls, grid: Sequence[Sequence[NcPolynomial | Scalar]]) -> MatrixPolynomial:
        return cls(tuple(tuple(_as_poly(p) for p in row) for row in grid))

    @classmethod
    def scalar(cls, p: NcPolynomial | Scalar) -> MatrixPolynomial:
        return cls(((_as_poly(p),),))

    @classmethod
    def identity(cls, n: int) -> MatrixPolynomial:
        one, zero = NcPolynomial.constant(1.0), NcPolynomial()
        return cls(tuple(tuple(one if i == j else zero for j in range(n)) for i in range(n)))

    @property
    def n(self) -> int:
        return len(self.entries)

    @property
    def degree(self) -> int:
        return max(p.degree for row in self.entries for p in row)

    @property
    def num_variables(self) -> int:
        return max(p.num_variables for row in self.entries for p in row)

    def __getitem__(self, ij: tuple[int, int]) -> NcPolynomial:
        i, j = ij
        return self.entries[i][j]

    def _zip(self, other: MatrixPolynomial, op) -> MatrixPolynomial:
        if self.n != other.n:
            raise ValueError(f"size mismatch: {self.n} vs {other.n}")
        return MatrixPolynomial(
            tuple(
                tuple(op(a, b) for a, b in zip(ra, rb))
                for ra, rb in zip(self.entries, other.entries)
            )
        )

    def __add__(self, other: MatrixPolynomial) -> MatrixPolynomial:
        return self._zip(other, lambda a, b: a + b)

    def __sub__(self, other: MatrixPolynomial) -> MatrixPolynomial:
        return self._zip(other, lambda a, b: a - b)

    def __neg__(self) -> MatrixPolynomial:
        return self.map(lambda p: -p)

    def __mul__(self, other: MatrixPolynomial | Scalar) -> MatrixPolynomial:
        if not isinstance(other, MatrixPolynomial):
            return self.map(lambda p: p * other)
        if self.n != other.n:
            raise ValueError(f"size mismatch: {self.n} vs {other.n}")
        n = self.n
        grid = []
        for i in range(n):
            row = []
            for j in range(n):
                acc = NcPolynomial()
                for k in range(n):
                    acc = acc + self.entries[i][k] * other.entries[k][j]
                row.append(acc)
            grid.append(tuple(row))
        return MatrixPolynomial(tuple(grid))

    def __rmul__(self, other: Scalar) -> MatrixPolynomial:
        return self.map(lambda p: other * p)

    def map(self, fn) -> MatrixPolynomial:
        return MatrixPolynomial(tuple(tuple(fn(p) for p in row) for row in self.entries))

    def adjoint(self) -> MatrixPolynomial:
        n = self.n
        return MatrixPolynomial(
            tuple(tuple(self.entries[j][i].adjoint() for j in range(n)) for i in range(n))
        )

    def transpose_action(self) -> MatrixPolynomial:
        n = self.n
        return MatrixPolynomial(
            tuple(
                tuple(self.entries[j][i].transpose_action() for j in range(n))
                for i in range(n)
            )
        )

    def is_self_adjoint(self, tol: float = 1e-12) -> bool:
        return self.close_to(self.adjoint(), tol)

    def close_to(self, other: MatrixPolynomial, tol: float = 1e-12) -> bool:
        return self.n == other.n and all(
            a.close_to(b, tol)
            for ra, rb in zip(self.entries, other.entries)
            for a, b in zip(ra, rb)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MatrixPolynomial):
            return NotImplemented
        return self.entries == other.entries

    def __hash__(self) -> int:
        return hash(self.entries)

    def __str__(self) -> str:
        return format_matrix(self)

    def evaluate(self, xs, size: int | None = None) -> np.ndarray:
        """Evaluate entrywise; block (i, j) of the result is entries[i][j](xs)."""
        mats = _variable_lookup(xs)
        s = _common_size(mats, self, size)
        cache: dict = {}
        blocks = [[_evaluate_entry(p, mats, s, cache) for p in row] for row in self.entries]
        return np.block(blocks)


def evaluate(f: MatrixPolynomial | NcPolynomial, xs, size: int | None = None) -> np.ndarray:
    return f.evaluate(xs, size)


def adjoint(f):
    return f.adjoint()


def transpose_action(f):
    return f.transpose_action()


# ----------------------------------------------------------------------------
# text form


def _format_number(x: float) -> str:
    return repr(float(x))


def _format_coefficient(c: complex) -> str:
    if c.imag == 0:
        return _format_number(c.real)
    sign = "-" if c.imag < 0 else "+"
    return f"({_format_number(c.real)}{sign}{_format_number(abs(c.imag))}i)"


def format_poly(p: NcPolynomial) -> str:
    if p.is_zero():
        return "0.0"
    parts = []
    for word, c in p.items:
        factors = [_format_coefficient(c)] + [f"x{v}" for v in word]
        if word and c == 1:
            factors = factors[1:]
        parts.append("*".join(factors))
    return " + ".join(parts)


def format_matrix(f: MatrixPolynomial) -> str:
    if f.n == 1:
        return format_poly(f.entries[0][0])
    grid = [[format_poly(p) for p in row] for row in f.entries]
    return json.dumps({"n": f.n, "entries": grid})


class PolynomialSyntaxError(ValueError):
    """Raised for malformed polynomial text; ``position`` is a 0-based offset."""

    def __init__(self, message: str, position: int, text: str = ""):
        self.position = position
        self.text = text
        super().__init__(f"{message} at position {position}")


_FLOAT = r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?"
_COMPLEX_RE = re.compile(
    rf"\(\s*([+-]?{_FLOAT})\s*([+-])\s*({_FLOAT})\s*i\s*\)"
)
_FLOAT_RE = re.compile(_FLOAT)
_VAR_RE = re.compile(r"x(\d+)")
_UINT_RE = re.compile(r"\d+")


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message: str, position: int | None = None):
        raise PolynomialSyntaxError(message, self.pos if position is None else position, self.text)

    def skip(self):
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def accept(self, token: str) -> bool:
        self.skip()
        if self.text.startswith(token, self.pos):
            self.pos += len(token)
            return True
        return False

    def expect(self, token: str):
        if not self.accept(token):
            found = self.peek() or "end of input"
            self.error(f"expected {token!r}, found {found!r}")

    def parse(self) -> NcPolynomial:
        value = self.expr()
        if self.peek():
            self.error(f"unexpected {self.peek()!r}")
        return value

    def expr(self) -> NcPolynomial:
        value = self.term()
        while True:
            if self.accept("+"):
                value = value + self.term()
            elif self.accept("-"):
                value = value - self.term()
            else:
                return value

    def term(self) -> NcPolynomial:
        sign = 1.0
        while self.peek() in ("+", "-"):
            if self.accept("-"):
                sign = -sign
            else:
                self.accept("+")
        value = self.power()
        while self.accept("*"):
            value = value * self.power()
        return sign * value if sign < 0 else value

    def power(self) -> NcPolynomial:
        value = self.factor()
        while self.accept("^"):
            self.skip()
            m = _UINT_RE.match(self.text, self.pos)
            if not m:
                self.error("expected unsigned integer exponent")
            self.pos = m.end()
            value = value ** int(m.group())
        return value

    def factor(self) -> NcPolynomial:
        self.skip()
        start = self.pos
        if self.accept("adj("):
            inner = self.expr()
            self.expect(")")
            return inner.adjoint()
        m = _COMPLEX_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            re_part = float(m.group(1))
            im_part = float(m.group(3)) * (1 if m.group(2) == "+" else -1)
            return NcPolynomial.constant(complex(re_part, im_part))
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        m = _VAR_RE.match(self.text, self.pos)
        if m:
            index = int(m.group(1))
            if index == 0:
                self.error("variable index must be >= 1", start)
            self.pos = m.end()
            return NcPolynomial.variable(index)
        m = _FLOAT_RE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return NcPolynomial.constant(float(m.group()))
        found = self.peek() or "end of input"
        self.error(f"unexpected {found!r}")


def parse_poly(text: str) -> NcPolynomial:
    return _Parser(text).parse()


def parse(text: str, n: int | None = None) -> MatrixPolynomial:
    """Parse scalar DSL text or the JSON matrix form into a MatrixPolynomial.

    For scalar text ``n`` may be given to build ``p * I_n``.
    """
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise PolynomialSyntaxError(f"invalid JSON: {exc.msg}", exc.pos, text) from exc
        return parse_matrix_payload(payload, n)
    p = parse_poly(text)
    size = 1 if n is None else int(n)
    zero = NcPolynomial()
    return MatrixPolynomial(
        tuple(tuple(p if i == j else zero for j in range(size)) for i in range(size))
    )


def parse_matrix_payload(payload: Mapping, n: int | None = None) -> MatrixPolynomial:
    try:
        rows = payload["entries"]
    except (KeyError, TypeError):
        raise ValueError("matrix polynomial JSON needs an 'entries' field") from None
    declared = payload.get("n", len(rows))
    if n is not None and int(n) != int(declared):
        raise ValueError(f"declared size {declared} does not match requested n={n}")
    if len(rows) != declared or any(len(r) != declared for r in rows):
        raise ValueError(f"entry grid is not {declared}x{declared}")
    grid = []
    for i, row in enumerate(rows):
        parsed = []
        for j, entry in enumerate(row):
            try:
                parsed.append(parse_poly(str(entry)))
            except PolynomialSyntaxError as exc:
                raise PolynomialSyntaxError(
                    f"entry ({i},{j}): {exc.args[0].rsplit(' at position', 1)[0]}",
                    exc.position,
                    str(entry),
                ) from None
        grid.append(tuple(parsed))
    return MatrixPolynomial(tuple(grid))
