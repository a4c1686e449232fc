"""Block Wigner ensembles: entry laws, nested sampling, empirical spectra, experiments.

Matrix ``l`` of a sample is real symmetric for even ``l`` and ``i`` times a
real antisymmetric matrix for odd ``l``, so that ``Xi_l^T = (-1)^l Xi_l``.
Entries of matrix ``l`` for sample ``k`` come from a Philox stream keyed by
``(seed, k, l)`` and are consumed in column-major upper-triangle order, so
the ``N x N`` sample is exactly the upper-left block of the ``(N+1) x (N+1)``
one.
"""

from __future__ import annotations

import math
import os
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import integrate, stats

from .bias import ModelMoments, bias_scalar
from .linearize import SaltDesign, linearize
from .ncpoly import MatrixPolynomial
from .spectra import SupportSet, stieltjes, support

LAW_NAMES = ("gaussian", "rademacher", "uniform", "custom")
MONTE_CARLO_MOMENT_SAMPLES = 1_000_000
_SQRT3 = math.sqrt(3.0)


# ----------------------------------------------------------------------------
# entry laws


@dataclass(frozen=True)
class RawMoments:
    """Mean, standard deviation and third/fourth central moments of a (truncated) law."""

    mean: float
    std: float
    third: float
    fourth: float


@dataclass(frozen=True, eq=False)
class EntryLaw:
    """Scalar entry law, optionally truncated at ``cutoff`` and renormalized.

    After ``trunc`` the law has mean 0 and variance 1.  ``custom`` laws need
    a ``sampler(rng, size)``; their moments are estimated from a fixed-seed
    Monte Carlo run of ``MONTE_CARLO_MOMENT_SAMPLES`` draws.
    """

    name: str = "gaussian"
    cutoff: float | None = None
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    diagonal_variance: float = 1.0

    def __post_init__(self):
        if self.name not in LAW_NAMES:
            raise ValueError(f"unknown entry law {self.name!r}; choose from {LAW_NAMES}")
        if self.name == "custom" and self.sampler is None:
            raise ValueError("custom law needs a sampler")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("truncation cutoff must be positive")
        if self.diagonal_variance < 0:
            raise ValueError("diagonal variance must be non-negative")

    @property
    def label(self) -> str:
        return self.name if self.cutoff is None else f"{self.name}[C={self.cutoff:g}]"

    def raw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Untruncated draws, consumed one value at a time from ``rng``."""
        if self.name == "gaussian":
            return rng.standard_normal(size)
        if self.name == "rademacher":
            return np.where(rng.random(size) < 0.5, -1.0, 1.0)
        if self.name == "uniform":
            return rng.uniform(-_SQRT3, _SQRT3, size)
        return np.asarray(self.sampler(rng, size), dtype=float)

    @cached_property
    def truncated_moments(self) -> RawMoments:
        """Moments of ``Z 1{|Z| <= C}`` (of ``Z`` when there is no cutoff)."""
        c = math.inf if self.cutoff is None else self.cutoff
        if self.name == "rademacher":
            kept = 1.0 if c >= 1 else 0.0
            return _moments_from_raw(0.0, kept, 0.0, kept)
        if self.name in ("gaussian", "uniform"):
            if self.name == "gaussian":
                pdf, lo, hi = stats.norm.pdf, -c, c
            else:
                pdf, lo, hi = (lambda x: 1 / (2 * _SQRT3)), max(-c, -_SQRT3), min(c, _SQRT3)
            raw = [
                integrate.quad(lambda x, k=k: x**k * pdf(x), lo, hi)[0] if hi > lo else 0.0
                for k in range(1, 5)
            ]
            return _moments_from_raw(*raw)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(20240)))
        z = self.raw(rng, MONTE_CARLO_MOMENT_SAMPLES)
        z = np.where(np.abs(z) <= c, z, 0.0)
        return _moments_from_raw(*(float(np.mean(z**k)) for k in range(1, 5)))

    def trunc(self, raw: np.ndarray) -> np.ndarray:
        """``(Z 1{|Z|<=C} - E Z 1{|Z|<=C}) / rho_C``."""
        mom = self.truncated_moments
        if mom.std <= 0:
            raise ValueError(f"truncation at C={self.cutoff} leaves no variance")
        raw = np.asarray(raw, dtype=float)
        if self.cutoff is not None:
            raw = np.where(np.abs(raw) <= self.cutoff, raw, 0.0)
        return (raw - mom.mean) / mom.std

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.trunc(self.raw(rng, size))

    @property
    def third_moment(self) -> float:
        mom = self.truncated_moments
        return mom.third / mom.std**3

    @property
    def fourth_moment(self) -> float:
        mom = self.truncated_moments
        return mom.fourth / mom.std**4

    def model_moments(self, m: int) -> ModelMoments:
        """Per-variable moments of the ensemble built by :func:`sample`."""
        v = self.diagonal_variance
        diag_var = tuple(v if ell % 2 == 0 else 0.0 for ell in range(1, m + 1))
        diag_third = tuple(v**1.5 * self.third_moment if ell % 2 == 0 else 0.0 for ell in range(1, m + 1))
        # for a real entry xi or i*xi the scalar fourth cumulant is E xi^4 - 3
        kappa = tuple(self.fourth_moment - 3.0 for _ in range(m))
        return ModelMoments(diag_var, diag_third, kappa)


def _moments_from_raw(m1: float, m2: float, m3: float, m4: float) -> RawMoments:
    var = m2 - m1**2
    third = m3 - 3 * m1 * m2 + 2 * m1**3
    fourth = m4 - 4 * m1 * m3 + 6 * m1**2 * m2 - 3 * m1**4
    return RawMoments(mean=m1, std=math.sqrt(max(var, 0.0)), third=third, fourth=fourth)


def law_from_name(text: str) -> EntryLaw:
    """``gaussian``, ``rademacher``, ``uniform``, optionally ``:C`` for truncation."""
    name, _, cut = text.partition(":")
    return EntryLaw(name=name.strip().lower(), cutoff=float(cut) if cut else None)


# ----------------------------------------------------------------------------
# sampling


def _entry_stream(seed: int, sample: int, ell: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(sample, ell))))


@dataclass(frozen=True, eq=False)
class WignerSample:
    """Real parts ``parts[l-1]`` with ``Xi_l = phase_l * parts[l-1]``."""

    N: int
    parts: tuple[np.ndarray, ...]
    seed: int
    index: int = 0

    @property
    def m(self) -> int:
        return len(self.parts)

    @staticmethod
    def phase(ell: int) -> complex:
        return 1.0 if ell % 2 == 0 else 1j

    @property
    def matrices(self) -> list[np.ndarray]:
        return [self.phase(ell) * p for ell, p in enumerate(self.parts, start=1)]

    def block(self, size: int) -> WignerSample:
        return WignerSample(size, tuple(p[:size, :size] for p in self.parts), self.seed, self.index)


@lru_cache(maxsize=16)
def _upper_order(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column of draw ``j (j + 1) / 2 + i`` (the lower triangle read row by row, transposed)."""
    lower_rows, lower_cols = np.tril_indices(N)
    return lower_cols, lower_rows


def sample(law: EntryLaw, N: int, m: int, seed: int, index: int = 0) -> WignerSample:
    """Draw ``m`` independent ``N x N`` Wigner matrices.

    Entry ``(i, j)`` with ``i <= j`` is draw number ``j (j + 1) / 2 + i`` of
    its stream; odd matrices ignore their diagonal draws.
    """
    if N < 1:
        raise ValueError("N must be positive")
    count = N * (N + 1) // 2
    rows, cols = _upper_order(N)
    diag = rows == cols
    parts = []
    for ell in range(1, m + 1):
        values = law.draw(_entry_stream(seed, index, ell), count)
        mat = np.zeros((N, N))
        if ell % 2 == 0:
            values = np.where(diag, values * math.sqrt(law.diagonal_variance), values)
            mat[rows, cols] = values
            mat[cols, rows] = values
        else:
            values = np.where(diag, 0.0, values)
            mat[rows, cols] = values
            mat[cols, rows] = -values
        parts.append(mat)
    return WignerSample(N, tuple(parts), seed, index)


# ----------------------------------------------------------------------------
# empirical spectra


@dataclass(frozen=True, eq=False)
class EmpiricalSpectrum:
    eigenvalues: np.ndarray
    N: int
    n: int

    def stieltjes(self, z: complex) -> complex:
        return complex(np.mean(1.0 / (self.eigenvalues - z)))


def _evaluate_scaled(f: MatrixPolynomial, smp: WignerSample) -> tuple[np.ndarray, np.ndarray]:
    """Real and imaginary parts of ``f(Xi / sqrt(N))`` from the real parts and phases."""
    N = smp.N
    scale = 1.0 / math.sqrt(N)
    cache: dict = {}

    def word(w):
        if w in cache:
            return cache[w]
        if not w:
            val = np.eye(N)
        elif len(w) == 1:
            val = smp.parts[w[0] - 1] * scale
        else:
            val = (word(w[:-1]) @ smp.parts[w[-1] - 1]) * scale
        cache[w] = val
        return val

    if f.num_variables > smp.m:
        raise ValueError(f"polynomial uses {f.num_variables} variables, sample has {smp.m}")
    n = f.n
    re = np.zeros((n * N, n * N))
    im = np.zeros((n * N, n * N))
    for i, row in enumerate(f.entries):
        for j, p in enumerate(row):
            blk = (slice(i * N, (i + 1) * N), slice(j * N, (j + 1) * N))
            for w, c in p.items:
                phase = c * np.prod([WignerSample.phase(v) for v in w]) if w else c
                mat = word(w)
                if phase.real != 0:
                    re[blk] += phase.real * mat
                if phase.imag != 0:
                    im[blk] += phase.imag * mat
    return re, im


def empirical_spectrum(f: MatrixPolynomial, smp: WignerSample) -> EmpiricalSpectrum:
    """Sorted eigenvalues of ``f(Xi / sqrt(N))``.

    Purely imaginary (hence ``i`` times antisymmetric) evaluations use the
    real eigenvalues of ``A^T A``, which come in pairs.  This is about twice
    as fast as a complex Hermitian solve; eigenvalues near zero carry an
    absolute error of order ``sqrt(machine eps) * |A|``.
    """
    if not f.is_self_adjoint(1e-12):
        raise ValueError("empirical_spectrum needs a self-adjoint polynomial")
    re, im = _evaluate_scaled(f, smp)
    if not im.any():
        ev = np.linalg.eigvalsh((re + re.T) / 2)
    elif not re.any():
        mu = np.linalg.eigvalsh(im.T @ im)[::-1].clip(min=0.0)
        ev = np.sort(np.concatenate([np.sqrt(mu[0::2]), -np.sqrt(mu[1::2])]))
    else:
        h = re + 1j * im
        ev = np.linalg.eigvalsh((h + h.conj().T) / 2)
    return EmpiricalSpectrum(np.sort(ev), smp.N, f.n)


def linearized_stieltjes(design: SaltDesign, smp: WignerSample, z: complex) -> complex:
    """``(1/(nN)) sum_i tr(e R(i, i))`` with ``R = (L(Xi/sqrt N) - 1 (x) (theta + z e))^{-1}``."""
    N, s = smp.N, design.s
    mats = [x / math.sqrt(N) for x in smp.matrices[: design.m]] or [np.zeros((N, N))]
    big = design.pencil(mats) - np.kron(np.eye(N), design.theta + z * design.e)
    inv = np.linalg.inv(big)
    diag_blocks = inv.reshape(N, s, N, s)[np.arange(N), :, np.arange(N), :]
    return complex(np.trace(design.e @ diag_blocks.sum(axis=0)) / (N * np.trace(design.e).real))


def empirical_stieltjes(
    f: MatrixPolynomial,
    smp: WignerSample,
    z: complex,
    *,
    design: SaltDesign | None = None,
    verify: bool = True,
    spectrum: EmpiricalSpectrum | None = None,
) -> complex:
    """``tr (f(Xi/sqrt N) - z)^{-1} / (nN)`` from the eigenvalues.

    With ``verify`` the same quantity is recomputed from the resolvent corner
    of the linearized pencil and an ``AssertionError`` is raised if the two
    disagree by more than 1e-9.
    """
    z = complex(z)
    if z.imag <= 0:
        raise ValueError("empirical_stieltjes needs Im z > 0")
    spec = spectrum if spectrum is not None else empirical_spectrum(f, smp)
    value = spec.stieltjes(z)
    if verify:
        design = design if design is not None else linearize(f)
        other = linearized_stieltjes(design, smp, z)
        if abs(other - value) > 1e-9:
            raise AssertionError(f"linearized resolvent corner disagrees: {abs(other - value):.3g}")
    return value


# ----------------------------------------------------------------------------
# experiments


def worker_count() -> int:
    cap = os.environ.get("FREESPEC_THREADS")
    cpus = os.cpu_count() or 1
    if cap:
        try:
            return max(1, min(cpus, int(cap)))
        except ValueError:
            raise ValueError(f"FREESPEC_THREADS must be an integer, got {cap!r}") from None
    return cpus


def _map_ordered(fn, items: Sequence, workers: int | None = None) -> list:
    """Apply ``fn`` to every item; results come back in item order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ConvergenceRow:
    N: int
    sample: int
    lambda_max: float
    lambda_min: float
    outliers_eps: int
    edge_gap: float


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    rows: tuple[ConvergenceRow, ...]
    support: SupportSet
    norm: float
    epsilon: float
    law: str
    seed: int

    def by_N(self) -> dict[int, list[ConvergenceRow]]:
        out: dict[int, list[ConvergenceRow]] = {}
        for r in self.rows:
            out.setdefault(r.N, []).append(r)
        return out

    def summary(self) -> list[dict]:
        """Per-N mean/max largest eigenvalue (with standard error) and outlier totals."""
        out = []
        for N, rows in sorted(self.by_N().items()):
            lam = np.array([r.lambda_max for r in rows])
            out.append(
                {
                    "N": N,
                    "mean_lambda_max": float(lam.mean()),
                    "stderr_lambda_max": float(lam.std(ddof=1) / math.sqrt(len(lam))) if len(lam) > 1 else 0.0,
                    "max_lambda_max": float(lam.max()),
                    "outliers": int(sum(r.outliers_eps for r in rows)),
                    "max_edge_gap": float(max(r.edge_gap for r in rows)),
                }
            )
        return out


def convergence_experiment(
    f: MatrixPolynomial,
    law: EntryLaw,
    sizes: Sequence[int],
    samples: int,
    seed: int,
    *,
    epsilon: float = 0.3,
    support_set: SupportSet | None = None,
    workers: int | None = None,
) -> ConvergenceReport:
    """Extreme eigenvalues and outliers against the computed support.

    ``edge_gap`` is the larger distance of the extreme eigenvalues from the
    corresponding support edges.
    """
    design = linearize(f)
    supp = support_set if support_set is not None else support(design)
    norm = max(abs(supp.lower), abs(supp.upper))
    m = max(f.num_variables, 1)
    jobs = [(N, k) for N in sizes for k in range(samples)]

    def run(job):
        N, k = job
        ev = empirical_spectrum(f, sample(law, N, m, seed, index=k)).eigenvalues
        outside = sum(1 for x in ev if not supp.contains(float(x), epsilon))
        gap = max(abs(ev[-1] - supp.upper), abs(ev[0] - supp.lower))
        return ConvergenceRow(N, k, float(ev[-1]), float(ev[0]), outside, float(gap))

    rows = tuple(_map_ordered(run, jobs, workers))
    return ConvergenceReport(rows, supp, norm, epsilon, law.label, seed)


@dataclass(frozen=True)
class BiasRow:
    N: int
    average: complex
    raw_average: complex
    limit: complex
    bias_over_N: complex
    deviation: float
    residual: float
    stderr: float


@dataclass(frozen=True, eq=False)
class BiasReport:
    rows: tuple[BiasRow, ...]
    z: complex
    law: str
    seed: int

    @staticmethod
    def _slope(x, y) -> float:
        return float(np.polyfit(np.log(x), np.log(y), 1)[0])

    @property
    def uncorrected_slope(self) -> float:
        return self._slope([r.N for r in self.rows], [r.deviation for r in self.rows])

    @property
    def corrected_slope(self) -> float:
        return self._slope([r.N for r in self.rows], [r.residual for r in self.rows])


def _frobenius_mean(law: EntryLaw, N: int, ell: int) -> float:
    """Exact mean of ``||X_l||_F^2 / N^2`` for unit-variance off-diagonal entries."""
    diagonal = law.diagonal_variance if ell % 2 == 0 else 0.0
    return (N * (N - 1) + N * diagonal) / N**2


def _control_variate_mean(values: np.ndarray, controls: np.ndarray) -> tuple[complex, float]:
    """Mean of ``values`` after regressing out centred ``controls`` with known zero mean.

    Returns the adjusted mean and the per-sample spread of the adjusted values.
    Constant controls drop out through the least-squares minimum-norm solution.
    """
    centred = controls - controls.mean(axis=0)
    adjusted = values.astype(complex)
    if np.any(centred.std(axis=0) > 1e-12):
        re = np.linalg.lstsq(centred, values.real - values.real.mean(), rcond=1e-10)[0]
        im = np.linalg.lstsq(centred, values.imag - values.imag.mean(), rcond=1e-10)[0]
        adjusted = adjusted - controls @ (re + 1j * im)
    spread = float(np.sqrt(adjusted.real.var(ddof=1) + adjusted.imag.var(ddof=1)))
    return complex(adjusted.mean()), spread


def bias_experiment(
    f: MatrixPolynomial,
    law: EntryLaw,
    z: complex,
    sizes: Sequence[int],
    samples: int,
    seed: int,
    *,
    workers: int | None = None,
    verify_first: bool = True,
) -> BiasReport:
    """Monte Carlo average of the empirical Stieltjes transform per ``N``.

    The linearized cross-check runs on the first sample of each ``N`` only;
    it costs a dense solve of the pencil and is exact algebra.

    ``average`` subtracts the regression on ``||X_l||_F^2 / N^2``, whose mean
    is known exactly, so its expectation equals that of ``raw_average`` while
    the sampling noise of the dominant fluctuation mode is removed.
    """
    z = complex(z)
    if z.imag < 1:
        raise ValueError("bias_experiment is calibrated for Im z >= 1")
    design = linearize(f)
    limit = stieltjes(design, z)
    moments = law.model_moments(max(design.m, 1))
    m = max(f.num_variables, 1)
    rows = []
    for N in sizes:

        def run(k, N=N):
            smp = sample(law, N, m, seed, index=k)
            value = empirical_stieltjes(f, smp, z, design=design, verify=verify_first and k == 0)
            return value, [float(np.sum(p * p)) / N**2 for p in smp.parts]

        out = _map_ordered(run, list(range(samples)), workers)
        values = np.array([v for v, _ in out])
        controls = np.array([c for _, c in out]) - [_frobenius_mean(law, N, ell) for ell in range(1, m + 1)]
        raw = complex(values.mean())
        avg, spread = _control_variate_mean(values, controls)
        stderr = spread / math.sqrt(samples)
        b = bias_scalar(design, z, N, moments) / N
        rows.append(
            BiasRow(
                N=N,
                average=avg,
                raw_average=raw,
                limit=limit,
                bias_over_N=b,
                deviation=abs(avg - limit),
                residual=abs(avg - limit - b),
                stderr=stderr,
            )
        )
    return BiasReport(tuple(rows), z, law.label, seed)
