"""Exact matrix identities for resolvents of block matrices on index subsets.

A :class:`RecipeBook` fixes a Hermitian block matrix ``X`` (blocks in
``S = Mat_s``), a point ``Lam`` and a covariance map ``Phi``, and computes the
resolvent-derived quantities ("recipes") on subsets ``I`` of ``{0..N-1}``:

* ``R_I``: inverse of ``X/sqrt(N) - 1 (x) Lam`` restricted to ``I``, embedded
  in the full index range with zeros elsewhere;
* ``F_I = tr_S R_I / N``, ``T_I(zeta) = sum R_I(i,j) zeta R_I(j,i) / N``;
* ``E_I = 1 + (Lam + Phi(F_I)) F_I`` and ``H_I = -(Lam + Phi(F_I))^{-1}``
  when ``|E_I| < 1/2`` (zero otherwise);
* for ``J`` inside ``I``: ``Q_{I,J}``, ``P_{I,J}``, ``Delta_{I,J}``.

Every identity in :func:`check_identities` is an algebraic consequence of the
definitions, so both sides agree up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linearize import SaltDesign, covariance_map
from .wigner import EntryLaw, sample

GOOD_REGION = 0.5
IDENTITY_TOLERANCE = 1e-9


def _key(indices) -> tuple[int, ...]:
    return tuple(sorted(set(int(i) for i in indices)))


class RecipeBook:
    """Recipes of the triple ``(X, Lam, Phi)`` at scale ``N``.

    ``X`` is an ``(M s) x (M s)`` Hermitian block matrix with ``M >= N``
    (``M = N + 1`` lets the rescaling identities compare scales ``N`` and
    ``N + 1``).
    """

    def __init__(self, x: np.ndarray, lam: np.ndarray, phi, N: int):
        self.s = lam.shape[0]
        self.M = x.shape[0] // self.s
        if N > self.M:
            raise ValueError(f"scale N={N} exceeds the {self.M} available indices")
        self.x = np.asarray(x, dtype=complex)
        self.lam = np.asarray(lam, dtype=complex)
        self.phi = phi
        self.N = N
        self.one = np.eye(self.s)
        self._cache: dict = {}

    # -- index helpers ---------------------------------------------------

    def rows(self, indices) -> np.ndarray:
        s = self.s
        return np.array([i * s + p for i in _key(indices) for p in range(s)], dtype=int)

    def select(self, indices) -> np.ndarray:
        """``f_I``: the ``|I| s x M s`` matrix picking the blocks of ``I``."""
        out = np.zeros((len(_key(indices)) * self.s, self.M * self.s))
        out[np.arange(out.shape[0]), self.rows(indices)] = 1.0
        return out

    def projection(self, indices) -> np.ndarray:
        """``e_I = f_I^* f_I``."""
        f = self.select(indices)
        return f.T @ f

    def block(self, a: np.ndarray, i: int, j: int) -> np.ndarray:
        s = self.s
        return a[i * s : (i + 1) * s, j * s : (j + 1) * s]

    def trace_s(self, a: np.ndarray) -> np.ndarray:
        """Sum of the diagonal ``s x s`` blocks."""
        k = a.shape[0] // self.s
        return a.reshape(k, self.s, k, self.s)[np.arange(k), :, np.arange(k), :].sum(axis=0)

    def ident(self, k: int, zeta: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(k), zeta)

    # -- first group -----------------------------------------------------

    def R(self, indices, N: int | None = None) -> np.ndarray:
        N = self.N if N is None else N
        key = ("R", _key(indices), N)
        if key not in self._cache:
            full = np.zeros_like(self.x)
            idx = self.rows(indices)
            if len(idx):
                local = self.x[np.ix_(idx, idx)] / math.sqrt(N) - self.ident(len(idx) // self.s, self.lam)
                full[np.ix_(idx, idx)] = np.linalg.inv(local)
            self._cache[key] = full
        return self._cache[key]

    def F(self, indices, N: int | None = None) -> np.ndarray:
        N = self.N if N is None else N
        return self.trace_s(self.R(indices, N)) / N

    def T_matrix(self, indices, N: int | None = None) -> np.ndarray:
        """Operator matrix (row-major flattening) of ``T_I``."""
        N = self.N if N is None else N
        key = ("T", _key(indices), N)
        if key not in self._cache:
            r = self.R(indices, N)
            s = self.s
            out = np.zeros((s * s, s * s), dtype=complex)
            for i in _key(indices):
                for j in _key(indices):
                    out += np.kron(self.block(r, i, j), self.block(r, j, i).T)
            self._cache[key] = out / N
        return self._cache[key]

    def T(self, indices, zeta: np.ndarray, N: int | None = None) -> np.ndarray:
        s = self.s
        return (self.T_matrix(indices, N) @ zeta.reshape(-1)).reshape(s, s)

    def R_sub(self, I, J) -> np.ndarray:
        """``R_{I,J} = f_J R_I f_J^*``."""
        idx = self.rows(J)
        return self.R(I)[np.ix_(idx, idx)]

    # -- second group ----------------------------------------------------

    def E(self, indices, N: int | None = None) -> np.ndarray:
        f = self.F(indices, N)
        return self.one + (self.lam + self.phi(f)) @ f

    def good(self, indices, N: int | None = None) -> bool:
        return float(np.linalg.norm(self.E(indices, N), 2)) < GOOD_REGION

    def H(self, indices, N: int | None = None) -> np.ndarray:
        if not self.good(indices, N):
            return np.zeros((self.s, self.s), dtype=complex)
        return -np.linalg.inv(self.lam + self.phi(self.F(indices, N)))

    def H_sub(self, I, J) -> np.ndarray:
        rest = set(_key(I)) - set(_key(J))
        return self.ident(len(_key(J)), self.H(rest))

    def Q(self, I, J) -> np.ndarray:
        N = self.N
        rest = set(_key(I)) - set(_key(J))
        fj = self.select(J)
        xj = fj @ self.x
        scaled = (
            -xj @ fj.T / math.sqrt(N)
            + xj @ self.R(rest) @ self.x @ fj.T / N
            - self.ident(len(_key(J)), self.phi(self.F(rest)))
        )
        return math.sqrt(N) * scaled

    def P(self, I, J, a: np.ndarray) -> np.ndarray:
        """``P_{I,J}(A)`` for ``A`` in ``Mat_|J|(S)``."""
        N = self.N
        rest = set(_key(I)) - set(_key(J))
        fj = self.select(J)
        r = self.R(rest)
        first = self.trace_s(r @ self.x @ fj.T @ a @ fj @ self.x @ r) / N
        second = self.T(rest, self.phi(self.trace_s(a)))
        return math.sqrt(N) * (first - second)

    def Delta(self, I, J) -> np.ndarray:
        rest = set(_key(I)) - set(_key(J))
        k = len(_key(J))
        out = self.H_sub(I, J) @ self.Q(I, J)
        if not self.good(rest):
            out = out + math.sqrt(self.N) * np.eye(k * self.s)
        return out


# ----------------------------------------------------------------------------
# identities


def _deviation(lhs: np.ndarray, rhs: np.ndarray) -> float:
    return float(np.max(np.abs(np.asarray(lhs) - np.asarray(rhs)))) if np.size(lhs) else 0.0


def rescaling(book: RecipeBook, I, k: int) -> float:
    N = book.N
    delta = math.sqrt(N) * (1 / math.sqrt(N) - 1 / math.sqrt(N + 1))
    e = book.projection(I)
    r, r_next = book.R(I), book.R(I, N + 1)
    step = delta * r @ (e @ book.x @ e) / math.sqrt(N)
    rhs = r.copy()
    power = np.eye(r.shape[0])
    for _ in range(1, k):
        power = power @ step
        rhs = rhs + power @ r
    rhs = rhs + power @ step @ r_next
    return _deviation(r_next, rhs)


def concrete_pre_very_dry(book: RecipeBook, I, J) -> float:
    N = book.N
    rest = set(_key(I)) - set(_key(J))
    fj = book.select(J)
    inner = (
        fj @ book.x @ fj.T / math.sqrt(N)
        - book.ident(len(_key(J)), book.lam)
        - fj @ book.x @ book.R(rest) @ book.x @ fj.T / N
    )
    return _deviation(book.R_sub(I, J), np.linalg.inv(inner))


def concrete_very_dry(book: RecipeBook, I, J) -> float:
    N = book.N
    rest = set(_key(I)) - set(_key(J))
    fj = book.select(J)
    r_rest = book.R(rest)
    left = fj.T - r_rest @ book.x @ fj.T / math.sqrt(N)
    right = fj - fj @ book.x @ r_rest / math.sqrt(N)
    return _deviation(book.R(I) - r_rest, left @ book.R_sub(I, J) @ right)


def master_rij(book: RecipeBook, I, J) -> float:
    N = book.N
    rest = set(_key(I)) - set(_key(J))
    k = len(_key(J))
    r = book.R_sub(I, J)
    lhs = -book.ident(k, book.lam + book.phi(book.F(rest))) @ r
    rhs = np.eye(k * book.s) + book.Q(I, J) @ r / math.sqrt(N)
    return _deviation(lhs, rhs)


def master_rij_expansion(book: RecipeBook, I, J, k: int) -> float:
    N = book.N
    h, q, dlt = book.H_sub(I, J), book.Q(I, J), book.Delta(I, J)
    r = book.R_sub(I, J)
    rhs = h.copy()
    hq = np.eye(h.shape[0])
    for nu in range(1, k):
        hq = hq @ h @ q
        rhs = rhs + hq @ h / N ** (nu / 2)
    rhs = rhs + np.linalg.matrix_power(dlt, k) @ r / N ** (k / 2)
    return _deviation(r, rhs)


def doubleton_entries(book: RecipeBook, I, J) -> float:
    """Entrywise first- and second-order versions of the expansion."""
    N, s = book.N, book.s
    rest = set(_key(I)) - set(_key(J))
    h = book.H(rest)
    dlt = book.Delta(I, J)
    r = book.R_sub(I, J)
    q = book.Q(I, J)
    one = dlt @ r / math.sqrt(N)
    two = dlt @ dlt @ r / N
    worst = 0.0
    jj = _key(J)
    full = book.R(I)
    for a, j1 in enumerate(jj):
        for b, j2 in enumerate(jj):
            entry = book.block(full, j1, j2) - (h if j1 == j2 else 0)
            sl = (slice(a * s, (a + 1) * s), slice(b * s, (b + 1) * s))
            worst = max(worst, _deviation(entry, one[sl]))
            worst = max(worst, _deviation(entry - h @ q[sl] @ h / math.sqrt(N), two[sl]))
    return worst


def master_fij(book: RecipeBook, I, J) -> float:
    N = book.N
    rest = set(_key(I)) - set(_key(J))
    fj = book.select(J)
    r = book.R_sub(I, J)
    r_rest = book.R(rest)
    lhs = N * (book.F(I) - book.F(rest))
    middle = book.trace_s(r) + book.trace_s(r_rest @ book.x @ fj.T @ r @ fj @ book.x @ r_rest) / N
    last = book.trace_s(r) + book.T(rest, book.phi(book.trace_s(r))) + book.P(I, J, r) / math.sqrt(N)
    return max(_deviation(lhs, middle), _deviation(lhs, last))


def master_hij(book: RecipeBook, I, J) -> float:
    rest = set(_key(I)) - set(_key(J))
    h_i, h_rest = book.H(I), book.H(rest)
    rhs = (
        h_i * (not book.good(rest))
        - h_rest * (not book.good(I))
        + h_i @ book.phi(book.F(I) - book.F(rest)) @ h_rest
    )
    return _deviation(h_i - h_rest, rhs)


def _singleton_terms(book: RecipeBook, I):
    for j in _key(I):
        rest = set(_key(I)) - {j}
        yield j, rest, book.R_sub(I, [j]), book.Q(I, [j]), book.H(rest), book.Delta(I, [j])


def ur_schwinger_dyson(book: RecipeBook, I) -> float:
    N = book.N
    lhs = book.E(I) + (len(_key(I)) - N) / N * book.one
    rhs = sum(
        book.phi(book.F(I) - book.F(rest)) @ r - q @ r / math.sqrt(N)
        for _, rest, r, q, _, _ in _singleton_terms(book, I)
    ) / N
    return _deviation(lhs, rhs)


def ur_schwinger_dyson_corrected(book: RecipeBook, I) -> float:
    N = book.N
    terms = list(_singleton_terms(book, I))
    lhs = book.E(I) + (len(_key(I)) - N) / N * book.one
    lhs = lhs + sum(q @ h for _, _, _, q, h, _ in terms) / N / math.sqrt(N)
    rhs = sum(
        book.phi(book.F(I) - book.F(rest)) @ r - q @ d @ r / N for _, rest, r, q, _, d in terms
    ) / N
    return _deviation(lhs, rhs)


def hf_comp1(book: RecipeBook, I) -> float:
    h, f, e = book.H(I), book.F(I), book.E(I)
    return _deviation(h - f, h @ e - f * (not book.good(I)))


def hf_comp2(book: RecipeBook, I) -> float:
    N = book.N
    h, f, e = book.H(I), book.F(I), book.E(I)
    bad = not book.good(I)
    terms = list(_singleton_terms(book, I))
    lhs = h - f + sum(book.F(rest) @ q @ hr for _, rest, _, q, hr, _ in terms) / N / math.sqrt(N)
    rhs = (N - len(_key(I))) / N * f + h @ e @ e - (f + f @ e) * bad
    rhs = rhs + sum(
        f @ book.phi(f - book.F(rest)) @ r
        - f @ q @ d @ r / N
        - (f - book.F(rest)) @ q @ hr / math.sqrt(N)
        for _, rest, r, q, hr, d in terms
    ) / N
    return _deviation(lhs, rhs)


def master_fij_bis(book: RecipeBook, I, J) -> float:
    N = book.N
    rest = set(_key(I)) - set(_key(J))
    h_rest = book.H(rest)
    r = book.R_sub(I, J)
    dr = book.Delta(I, J) @ r
    lhs = book.F(I) - book.F(rest) - len(_key(J)) * (h_rest + book.T(rest, book.phi(h_rest))) / N
    rhs = (book.P(I, J, r) + book.trace_s(dr) + book.T(rest, book.phi(book.trace_s(dr)))) / N**1.5
    return _deviation(lhs, rhs)


def f_rescaling(book: RecipeBook, I) -> float:
    N = book.N
    delta = math.sqrt(N) * (1 / math.sqrt(N) - 1 / math.sqrt(N + 1))
    r, r_next = book.R(I), book.R(I, N + 1)
    e = book.projection(I)
    shifted = e + r @ book.ident(book.M, book.lam)
    lhs = (N + 1) * book.F(I, N + 1) - N * book.F(I) - 0.5 * (book.F(I) + book.T(I, book.lam))
    inner = (N * delta - 0.5) * shifted @ r + (N * delta) ** 2 / N * shifted @ shifted @ r_next
    return _deviation(lhs, book.trace_s(inner) / N)


def trivial_rearrangement(book: RecipeBook, big: RecipeBook) -> float:
    """``big`` holds the same matrix at scale ``N + 1``."""
    N = book.N
    full, full_next = range(N), range(N + 1)
    h_next = big.H(full)
    link = (
        0.5 * (book.F(full) + book.T(full, book.lam))
        - big.F(full_next)
        + h_next
        + big.T(full, book.phi(h_next))
    )
    lhs = N * (big.F(full_next) - book.F(full)) - link
    rhs = (
        (N + 1) * big.F(full)
        - N * book.F(full)
        - 0.5 * (book.F(full) + book.T(full, book.lam))
        + (N + 1) * (big.F(full_next) - big.F(full))
        - h_next
        - big.T(full, book.phi(h_next))
    )
    return _deviation(lhs, rhs)


def _phi_t_phi(book: RecipeBook, rest, zeta):
    return book.phi(zeta) + book.phi(book.T(rest, book.phi(zeta)))


def pre_bias(book: RecipeBook, I) -> float:
    N = book.N
    lhs = book.E(I) + (len(_key(I)) - N) / N * book.one
    rhs = np.zeros_like(lhs)
    for j, rest, r, q, h, d in _singleton_terms(book, I):
        qh = q @ h
        lhs = lhs + ((qh @ qh - _phi_t_phi(book, rest, r) @ r) / N + qh @ qh @ qh / N**1.5) / N
        rhs = rhs + (
            -qh / math.sqrt(N)
            - q @ np.linalg.matrix_power(d, 3) @ r / N**2
            + book.phi(book.P(I, [j], r)) @ r / N**1.5
        ) / N
    return _deviation(lhs, rhs)


def bias_identity(book: RecipeBook) -> float:
    N = book.N
    full = range(N)
    lhs = book.E(full)
    rhs = np.zeros_like(lhs)
    for j, rest, r, q, h, d in _singleton_terms(book, full):
        check = h @ q @ h
        dr, d2r = d @ r, d @ d @ r
        qh = q @ h
        t_h = _phi_t_phi(book, rest, h)
        err = qh @ qh - t_h @ h + qh @ qh @ qh / math.sqrt(N)
        err1 = (
            t_h @ check
            + _phi_t_phi(book, rest, check) @ h
            + book.phi(book.P(full, [j], h)) @ h
        ) / N - qh
        err2 = (
            t_h @ d2r
            + _phi_t_phi(book, rest, check) @ dr
            + _phi_t_phi(book, rest, d2r) @ r
            + book.phi(book.P(full, [j], h)) @ dr
            + book.phi(book.P(full, [j], dr)) @ r
            - q @ d @ d2r
        )
        lhs = lhs + err / N / N
        rhs = rhs + (err1 / math.sqrt(N) + err2 / N**2) / N
    return _deviation(lhs, rhs)


# ----------------------------------------------------------------------------
# driver


IDENTITY_NAMES = (
    "rescaling",
    "concrete_pre_very_dry",
    "concrete_very_dry",
    "master_rij",
    "master_rij_expansion",
    "doubleton_entries",
    "master_fij",
    "master_hij",
    "ur_schwinger_dyson",
    "ur_schwinger_dyson_corrected",
    "hf_comp1",
    "hf_comp2",
    "master_fij_bis",
    "f_rescaling",
    "trivial_rearrangement",
    "pre_bias",
    "bias_identity",
)


@dataclass(frozen=True)
class IdentityReport:
    N: int
    seed: int
    deviations: dict[str, float]
    good_fraction: float
    tolerance: float = IDENTITY_TOLERANCE

    @property
    def worst(self) -> float:
        return max(self.deviations.values())

    @property
    def ok(self) -> bool:
        return all(v <= self.tolerance for v in self.deviations.values())


def block_matrix(design: SaltDesign, size: int, seed: int, law: EntryLaw | None = None) -> np.ndarray:
    """``L(Xi)`` for a Wigner sample of the given size: blocks ``sum_l Xi_l(i,j) a_l``."""
    law = law if law is not None else EntryLaw("gaussian")
    smp = sample(law, size, max(design.m, 1), seed)
    mats = smp.matrices[: design.m] or [np.zeros((size, size))]
    return design.pencil(mats)


def check_identities(
    design: SaltDesign,
    N: int,
    seed: int,
    z: complex = 1.0 + 1.0j,
    t: float = 0.0,
    *,
    law: EntryLaw | None = None,
    subsets: int = 3,
) -> IdentityReport:
    """Evaluate both sides of every identity on random subsets; report max deviations.

    Subsets are drawn with a generator seeded by ``seed``: ``I`` has at least
    three elements and ``J`` inside it has one or two.
    """
    if N < 4:
        raise ValueError("the identity suite needs N >= 4")
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("identities are checked at Im z > 0")
    lam = design.theta + z * design.e + 1j * t * np.eye(design.s)
    phi = covariance_map(design)
    x = block_matrix(design, N + 1, seed, law)
    book = RecipeBook(x, lam, phi, N)
    big = RecipeBook(x, lam, phi, N + 1)
    rng = np.random.default_rng([seed, N, 977])
    dev = {name: 0.0 for name in IDENTITY_NAMES}
    goods = []

    def bump(name, value):
        dev[name] = max(dev[name], value)

    full = list(range(N))
    choices = [full] + [
        sorted(rng.choice(N, size=int(rng.integers(3, N + 1)), replace=False).tolist())
        for _ in range(subsets)
    ]
    for I in choices:
        goods.append(book.good(I))
        for k in (1, 2, 3):
            bump("rescaling", rescaling(book, I, k))
        for size in (1, 2):
            J = sorted(rng.choice(I, size=size, replace=False).tolist())
            bump("concrete_pre_very_dry", concrete_pre_very_dry(book, I, J))
            bump("concrete_very_dry", concrete_very_dry(book, I, J))
            bump("master_rij", master_rij(book, I, J))
            for k in (1, 2, 3):
                bump("master_rij_expansion", master_rij_expansion(book, I, J, k))
            bump("doubleton_entries", doubleton_entries(book, I, J))
            bump("master_fij", master_fij(book, I, J))
            bump("master_hij", master_hij(book, I, J))
            bump("master_fij_bis", master_fij_bis(book, I, J))
            goods.append(book.good(set(I) - set(J)))
        bump("ur_schwinger_dyson", ur_schwinger_dyson(book, I))
        bump("ur_schwinger_dyson_corrected", ur_schwinger_dyson_corrected(book, I))
        bump("hf_comp1", hf_comp1(book, I))
        bump("hf_comp2", hf_comp2(book, I))
        bump("f_rescaling", f_rescaling(book, I))
        bump("pre_bias", pre_bias(book, I))
    bump("trivial_rearrangement", trivial_rearrangement(book, big))
    bump("bias_identity", bias_identity(book))
    return IdentityReport(N=N, seed=seed, deviations=dev, good_fraction=float(np.mean(goods)))
