import math

import numpy as np
import pytest
from scipy import stats

from freespec.linearize import linearize
from freespec.ncpoly import parse
from freespec.spectra import SupportSet
from freespec.wigner import (
    EntryLaw,
    _control_variate_mean,
    _frobenius_mean,
    bias_experiment,
    convergence_experiment,
    empirical_spectrum,
    empirical_stieltjes,
    law_from_name,
    linearized_stieltjes,
    sample,
    worker_count,
)


def semicircle_cdf(x):
    x = np.clip(x, -2, 2)
    return 0.5 + x * np.sqrt(4 - x**2) / (4 * np.pi) + np.arcsin(x / 2) / np.pi


class TestLaws:
    def test_rademacher_truncation_is_identity(self):
        law = EntryLaw("rademacher", cutoff=2.0)
        x = np.array([-1.0, 1.0, 1.0])
        assert np.array_equal(law.trunc(x), x)

    def test_gaussian_large_cutoff(self):
        mom = EntryLaw("gaussian", cutoff=12.0).truncated_moments
        assert abs(mom.std - 1) <= 1e-12 and abs(mom.mean) <= 1e-15

    def test_uniform_cutoff_renormalizes(self):
        law = EntryLaw("uniform", cutoff=1.0)
        rng = np.random.default_rng(0)
        x = law.draw(rng, 400_000)
        assert abs(x.mean()) <= 1e-2 and abs(x.var() - 1) <= 1e-2
        # exact: Z 1{|Z|<=1} for Z uniform on [-sqrt3, sqrt3] has variance 1/(3 sqrt3)
        assert abs(law.truncated_moments.std ** 2 - 1 / (3 * math.sqrt(3))) <= 1e-12

    def test_cutoff_too_small(self):
        with pytest.raises(ValueError):
            EntryLaw("rademacher", cutoff=0.5).trunc(np.ones(3))

    @pytest.mark.parametrize("name, fourth", [("gaussian", 3.0), ("rademacher", 1.0), ("uniform", 1.8)])
    def test_fourth_moments(self, name, fourth):
        assert abs(EntryLaw(name).fourth_moment - fourth) <= 1e-9

    def test_model_moments(self):
        mm = EntryLaw("rademacher").model_moments(2)
        assert mm.diagonal_variance == (0.0, 1.0)
        assert mm.kappa == (-2.0, -2.0)

    def test_custom_law_uses_monte_carlo(self):
        law = EntryLaw("custom", sampler=lambda rng, n: rng.laplace(size=n))
        # Laplace(1): variance 2, standardized fourth moment 6
        assert abs(law.fourth_moment - 6) <= 0.15
        assert law.truncated_moments == law.truncated_moments

    def test_parse_names(self):
        assert law_from_name("gaussian").label == "gaussian"
        assert law_from_name("uniform:1.5").label == "uniform[C=1.5]"
        with pytest.raises(ValueError):
            law_from_name("cauchy")


class TestSample:
    def test_small_rademacher(self):
        x = sample(EntryLaw("rademacher"), 2, 2, seed=5).matrices[1]
        assert np.isrealobj(x) or np.all(x.imag == 0)
        assert np.array_equal(x, x.T)
        assert abs(x[0, 1]) == 1

    def test_parity_and_hermitian(self):
        smp = sample(EntryLaw("gaussian"), 30, 3, seed=1)
        for ell, x in enumerate(smp.matrices, start=1):
            assert np.array_equal(x.T, (-1) ** ell * x)
            assert np.abs(x - x.conj().T).max() <= 1e-14
        assert np.all(np.diag(smp.matrices[0]) == 0)

    def test_nesting(self):
        for law in (EntryLaw("gaussian"), EntryLaw("uniform", cutoff=1.2)):
            small = sample(law, 17, 2, seed=9, index=4)
            big = sample(law, 18, 2, seed=9, index=4)
            for a, b in zip(small.parts, big.parts):
                assert np.array_equal(a, b[:17, :17])
            assert np.array_equal(big.block(17).parts[0], small.parts[0])

    def test_deterministic_and_independent(self):
        law = EntryLaw("gaussian")
        a = sample(law, 10, 2, seed=3, index=0)
        b = sample(law, 10, 2, seed=3, index=0)
        c = sample(law, 10, 2, seed=3, index=1)
        assert all(np.array_equal(x, y) for x, y in zip(a.parts, b.parts))
        assert not np.array_equal(a.parts[0], c.parts[0])
        assert not np.array_equal(a.parts[0], a.parts[1])

    @pytest.mark.parametrize("name", ["gaussian", "rademacher", "uniform"])
    def test_off_diagonal_variance(self, name):
        x = sample(EntryLaw(name), 450, 2, seed=2).parts[1]
        off = x[np.triu_indices(450, 1)]
        assert off.size >= 100_000
        assert abs(off.var() - 1) <= 0.02


class TestEmpirical:
    def test_single_entry(self):
        smp = sample(EntryLaw("gaussian"), 1, 2, seed=4)
        ev = empirical_spectrum(parse("x2"), smp).eigenvalues
        assert np.allclose(ev, smp.parts[1][0, 0])
        assert np.allclose(empirical_spectrum(parse("x1"), smp).eigenvalues, 0)

    def test_constant(self):
        smp = sample(EntryLaw("gaussian"), 6, 1, seed=4)
        spec = empirical_spectrum(parse("1"), smp)
        assert np.allclose(spec.eigenvalues, 1) and len(spec.eigenvalues) == 6
        assert abs(empirical_stieltjes(parse("1"), smp, 1j) - 1 / (1 - 1j)) <= 1e-14

    def test_square_nonnegative(self):
        smp = sample(EntryLaw("rademacher"), 41, 1, seed=8)
        assert empirical_spectrum(parse("x1^2"), smp).eigenvalues.min() >= -1e-12

    def test_imaginary_route_matches_complex(self):
        smp = sample(EntryLaw("gaussian"), 25, 1, seed=8)
        ev = empirical_spectrum(parse("x1"), smp).eigenvalues
        direct = np.linalg.eigvalsh(smp.matrices[0] / 5)
        # the Gram route loses half the digits only for eigenvalues near zero
        assert np.allclose(ev, direct, atol=1e-7)
        assert np.allclose(ev[np.abs(direct) > 0.1], direct[np.abs(direct) > 0.1], atol=1e-12)

    @pytest.mark.parametrize(
        "text", ["x1", "x1^2", "x1 + x2", "x1*x2 + x2*x1", '{"n": 2, "entries": [["x1", "x2"], ["x2", "x1^2"]]}']
    )
    def test_linearized_agreement(self, text):
        f = parse(text)
        smp = sample(EntryLaw("uniform"), 12, 2, seed=6)
        z = 0.4 + 0.9j
        value = empirical_stieltjes(f, smp, z)
        ev = empirical_spectrum(f, smp).eigenvalues
        assert len(ev) == f.n * 12
        assert abs(value - np.mean(1 / (ev - z))) <= 1e-10
        assert abs(linearized_stieltjes(linearize(f), smp, z) - value) <= 1e-9

    def test_rejects_lower_half_plane(self):
        with pytest.raises(ValueError):
            empirical_stieltjes(parse("x1"), sample(EntryLaw(), 3, 1, 0), 1 - 1j)

    def test_kolmogorov_distance(self):
        ev = empirical_spectrum(parse("x1"), sample(EntryLaw("gaussian"), 1600, 1, seed=21)).eigenvalues
        emp = np.arange(1, len(ev) + 1) / len(ev)
        ks = max(np.abs(emp - semicircle_cdf(ev)).max(), np.abs(emp - 1 / len(ev) - semicircle_cdf(ev)).max())
        assert ks <= 0.03
        assert ks == pytest.approx(stats.kstest(ev, semicircle_cdf).statistic)


class TestExperiments:
    def test_convergence_small(self):
        supp = SupportSet(((-2.0, 2.0),))
        rep = convergence_experiment(parse("x1"), EntryLaw("gaussian"), [20, 40], 3, seed=1, support_set=supp)
        assert [(r.N, r.sample) for r in rep.rows] == [(20, 0), (20, 1), (20, 2), (40, 0), (40, 1), (40, 2)]
        assert rep.norm == 2.0
        summary = rep.summary()
        assert [s["N"] for s in summary] == [20, 40]
        for r in rep.rows:
            assert r.lambda_min <= r.lambda_max and r.outliers_eps >= 0

    def test_worker_count_independent(self):
        supp = SupportSet(((-2.0, 2.0),))
        args = (parse("x1"), EntryLaw("rademacher"), [30], 4, 2)
        one = convergence_experiment(*args, support_set=supp, workers=1)
        two = convergence_experiment(*args, support_set=supp, workers=3)
        assert one.rows == two.rows

    def test_bias_small(self):
        rep = bias_experiment(parse("x1"), EntryLaw("gaussian"), 2j, [10, 20], 40, seed=3, workers=1)
        assert [r.N for r in rep.rows] == [10, 20]
        for r in rep.rows:
            assert r.stderr > 0
            assert r.deviation == pytest.approx(abs(r.average - r.limit))
            assert r.residual == pytest.approx(abs(r.average - r.limit - r.bias_over_N))
        assert np.isfinite(rep.uncorrected_slope) and np.isfinite(rep.corrected_slope)

    def test_bias_needs_im_z_at_least_one(self):
        with pytest.raises(ValueError):
            bias_experiment(parse("x1"), EntryLaw(), 0.5j, [10], 5, seed=0)

    def test_control_variate_exact_on_linear_data(self):
        rng = np.random.default_rng(1)
        c = rng.standard_normal((500, 1))
        c -= c.mean()
        values = (0.25 + 0.5j) + (2 - 1j) * c[:, 0]
        mean, spread = _control_variate_mean(values, c)
        assert abs(mean - (0.25 + 0.5j)) <= 1e-12 and spread <= 1e-12

    def test_control_variate_constant_control(self):
        values = np.array([1.0, 2.0, 3.0]) + 0j
        mean, _ = _control_variate_mean(values, np.zeros((3, 1)))
        assert mean == 2.0

    def test_frobenius_mean(self):
        law = EntryLaw("rademacher")
        smp = sample(law, 9, 2, seed=0)
        assert np.sum(smp.parts[0] ** 2) / 81 == pytest.approx(_frobenius_mean(law, 9, 1))
        assert np.sum(smp.parts[1] ** 2) / 81 == pytest.approx(_frobenius_mean(law, 9, 2))

    def test_worker_env(self, monkeypatch):
        monkeypatch.setenv("FREESPEC_THREADS", "1")
        assert worker_count() == 1
        monkeypatch.setenv("FREESPEC_THREADS", "lots")
        with pytest.raises(ValueError):
            worker_count()
