import json

import numpy as np
import pytest

from kron_dyson import clt, sampler
from kron_dyson.errors import DomainError, InputError, NumericalError

# V[bump3] at beta=2: the double integral evaluates to 128/(75 pi^2)
VG_BUMP3_BETA2 = 128.0 / (75.0 * np.pi**2)


def shifted(base, s):
    return clt.from_callables(
        lambda x: base.g(x - s),
        lambda x: base.gp(x - s),
        lambda x: base.gpp(x - s),
        base.sigma + abs(s),
    )


def asymmetric(flip=False):
    # (1 - x^2)^3 (1 + x/2): compactly supported, C^2, not even
    sgn = -1.0 if flip else 1.0

    def p(x):
        return (1 - x * x) ** 3

    def pp(x):
        return -6 * x * (1 - x * x) ** 2

    def ppp(x):
        return 6 * (1 - x * x) * (5 * x * x - 1)

    def g(x):
        return p(sgn * x) * (1 + sgn * x / 2)

    def gp(x):
        return sgn * (pp(sgn * x) * (1 + sgn * x / 2) + p(sgn * x) / 2)

    def gpp(x):
        return ppp(sgn * x) * (1 + sgn * x / 2) + pp(sgn * x)

    return clt.from_callables(g, gp, gpp, 1.0)


class TestVg:
    def test_bump3_oracle(self):
        vg = clt.vg_quadrature(clt.bump3(), 2)
        assert abs(vg - VG_BUMP3_BETA2) < 1e-12 * VG_BUMP3_BETA2

    def test_beta_scaling(self):
        g = clt.gaussian_truncated()
        assert abs(clt.vg_quadrature(g, 1) - 2 * clt.vg_quadrature(g, 2)) < 1e-14

    def test_quadratic_homogeneity(self):
        base = clt.bump3()
        tripled = clt.from_callables(
            lambda x: 3 * base.g(x),
            lambda x: 3 * base.gp(x),
            lambda x: 3 * base.gpp(x),
            base.sigma,
        )
        ratio = clt.vg_quadrature(tripled, 2) / clt.vg_quadrature(base, 2)
        assert abs(ratio - 9.0) < 1e-12

    def test_dilation_invariance(self):
        # V[g(x/s)] = V[g]: the functional is scale free
        a = clt.vg_quadrature(clt.bump3(1.0), 2)
        b = clt.vg_quadrature(clt.bump3(2.5), 2)
        assert abs(a - b) < 1e-10 * a

    def test_translation_invariance(self):
        base = clt.bump3()
        a = clt.vg_quadrature(base, 2)
        b = clt.vg_quadrature(shifted(base, 0.4), 2)
        assert abs(a - b) < 1e-5 * a

    def test_reflection_invariance(self):
        a = clt.vg_quadrature(asymmetric(), 2)
        b = clt.vg_quadrature(asymmetric(flip=True), 2)
        assert abs(a - b) < 1e-10 * a

    def test_zero_function(self):
        z = clt.from_callables(
            lambda x: 0 * x, lambda x: 0 * x, lambda x: 0 * x, 1.0
        )
        assert clt.vg_quadrature(z, 2) == 0.0

    def test_discontinuous_rejected(self):
        step = clt.from_callables(np.sign, lambda x: 0 * x, lambda x: 0 * x, 1.0)
        with pytest.raises(NumericalError):
            clt.vg_quadrature(step, 2)

    def test_bad_beta(self):
        with pytest.raises(InputError):
            clt.vg_quadrature(clt.bump3(), 3)


class TestFunctions:
    def test_bump3_values(self):
        g = clt.bump3()
        assert g(0.0) == 1.0
        assert g(1.0) == 0.0 and g(1.5) == 0.0
        assert g.gp(np.array([0.0]))[0] == 0.0
        assert abs(g.gpp(np.array([0.0]))[0] - (-6.0)) < 1e-14

    def test_bump3_derivatives_consistent(self):
        g = clt.bump3()
        x = np.linspace(-0.9, 0.9, 41)
        h = 1e-6
        d1 = (g.g(x + h) - g.g(x - h)) / (2 * h)
        d2 = (g.gp(x + h) - g.gp(x - h)) / (2 * h)
        assert np.max(np.abs(d1 - g.gp(x))) < 1e-8
        assert np.max(np.abs(d2 - g.gpp(x))) < 1e-8

    def test_bump3_norms(self):
        # |g'| and |g''| have kinks, so the quadrature is only ~1e-4 there
        n1, n1p, n1pp = clt.bump3().norms()
        assert abs(n1 - 32.0 / 35.0) < 1e-10
        assert abs(n1p - 2.0) < 1e-4
        assert abs(n1pp - 384.0 / (25.0 * np.sqrt(5.0))) < 1e-3

    def test_gaussian_truncated_edge(self):
        g = clt.gaussian_truncated()
        s = g.sigma
        assert g(s + 0.01) == 0.0 and g(-s - 0.01) == 0.0
        assert abs(g(s - 1e-5)) < 1e-8
        x = np.linspace(-2.5, 2.5, 31)
        h = 1e-6
        d1 = (g.g(x + h) - g.g(x - h)) / (2 * h)
        assert np.max(np.abs(d1 - g.gp(x))) < 1e-8

    def test_from_samples_matches_analytic(self):
        base = clt.bump3()
        xs = np.linspace(-1.0, 1.0, 401)
        g = clt.from_samples(xs, base.g(xs))
        assert g.sigma == 1.0
        x = np.linspace(-0.95, 0.95, 37)
        assert np.max(np.abs(g.g(x) - base.g(x))) < 1e-8
        a = clt.vg_quadrature(g, 2)
        assert abs(a - VG_BUMP3_BETA2) < 1e-5 * VG_BUMP3_BETA2

    def test_from_samples_guards(self):
        xs = np.linspace(-1, 1, 9)
        with pytest.raises(InputError):
            clt.from_samples(xs, np.ones(9))
        with pytest.raises(InputError):
            clt.from_samples(xs[::-1], np.zeros(9))
        with pytest.raises(InputError):
            clt.from_samples(np.array([0.0, 1.0]), np.array([0.0, 0.0]))


class TestScaled:
    def test_basic_geometry(self):
        g = clt.bump3()
        sf = clt.scaled_function(g, 0.3, 0.25, 256)
        assert sf.eta0 == 256.0**-0.25
        assert sf.delta == g.sigma * sf.eta0
        assert sf.support == (0.3 - sf.delta, 0.3 + sf.delta)
        assert sf.f(0.3) == 1.0
        assert sf.f(0.3 + 1.01 * sf.delta) == 0.0

    def test_chain_rule(self):
        sf = clt.scaled_function(clt.bump3(), 0.0, 0.2, 64)
        x = np.linspace(-0.3, 0.3, 11) * sf.delta
        h = 1e-7
        d1 = (sf.f(x + h) - sf.f(x - h)) / (2 * h)
        assert np.max(np.abs(d1 - sf.fp(x))) < 1e-5

    def test_gamma_domain(self):
        g = clt.bump3()
        for gamma in (0.0, 1.0, -0.2, 1.5):
            with pytest.raises(DomainError):
                clt.scaled_function(g, 0.0, gamma, 64)
        with pytest.raises(InputError):
            clt.scaled_function(g, 0.0, 0.5, 1)


class TestStatistics:
    def test_linear_statistic_sums(self):
        sf = clt.scaled_function(clt.bump3(), 0.0, 0.2, 64)
        assert clt.linear_statistic(np.array([0.0]), sf) == 1.0
        assert clt.linear_statistic(np.array([]), sf) == 0.0
        eigs = np.array([0.0, 0.0, 10.0])
        assert clt.linear_statistic(eigs, sf) == 2.0

    def test_hs_single_eigenvalue(self):
        got = clt.hs_statistic(np.array([0.0]), clt.bump3(), 0.0, 0.2, 256)
        assert abs(got - 1.0) < 1e-4

    def test_hs_eigenvalue_outside_window(self):
        got = clt.hs_statistic(np.array([1.0]), clt.bump3(), 0.0, 0.2, 256)
        assert abs(got) < 1e-6

    def test_hs_matches_linear_on_sample(self, semicircle):
        H = sampler.draw_matrix(semicircle, 256, sampler.substream_rng(0, 0))
        eigs = np.linalg.eigvalsh(H)
        sf = clt.scaled_function(clt.bump3(), 0.0, 0.2, 256)
        lin = clt.linear_statistic(eigs, sf)
        hs = clt.hs_statistic(eigs, clt.bump3(), 0.0, 0.2, 256)
        assert abs(hs - lin) < 1e-4 * abs(lin)

    def test_hs_unstable_quadrature_rejected(self):
        with pytest.raises(NumericalError):
            clt.hs_statistic(
                np.array([0.0]), clt.bump3(), 0.0, 0.2, 256, nodes=(8, 4), rtol=1e-12
            )


class TestRun:
    def test_requires_enough_samples(self, semicircle):
        with pytest.raises(InputError):
            clt.run_clt_experiment(semicircle, clt.bump3(), 0.0, 0.2, 64, samples=10)

    def test_refuses_edge_energy(self, semicircle):
        with pytest.raises(DomainError):
            clt.run_clt_experiment(semicircle, clt.bump3(), 5.0, 0.2, 64, samples=100)

    def test_deterministic_ensemble_degenerates(self, free_diag):
        rep = clt.run_clt_experiment(free_diag, clt.bump3(), 1.0, 0.2, 8, samples=100)
        assert rep.variance == 0.0
        assert rep.skewness == 0.0 and rep.excess_kurtosis == 0.0
        assert rep.ks_distance == 0.0 and rep.variance_ratio == 0.0
        assert len(set(rep.values)) == 1

    def test_reproducible_and_thread_invariant(self, semicircle):
        kw = dict(E0=0.0, gamma=0.2, N=32, samples=100, seed=5)
        a = clt.run_clt_experiment(semicircle, clt.bump3(), **kw, threads=1)
        b = clt.run_clt_experiment(semicircle, clt.bump3(), **kw, threads=3)
        assert a.values == b.values
        assert a.variance == b.variance
        assert a.vg > 0 and a.variance_ratio == a.variance / a.vg
        json.dumps(a.to_dict())
