import math

import numpy as np
import pytest

from glamsens import gld, glam
from glamsens import sensitivity as sens
from glamsens import simulators as sims
from glamsens.errors import DomainError, MomentUndefinedError, UndefinedIndexError
from glamsens.glam import GlamModel
from glamsens.gld import GldParams
from glamsens.pce import BasisSet, PceModel, uniform_model

IM2 = uniform_model([(0.0, 1.0), (0.0, 1.0)])
# x on U(0, 1) equals 0.5 + psi_1(x) / (2 sqrt 3) in the orthonormal Legendre basis
SLOPE = 1.0 / (2.0 * math.sqrt(3.0))
FAST_PCE = sens.PceSettings(n_pc=2000, degrees=range(1, 5), max_order=2)


def _glam(im, l1_terms, log_l2=0.0, l3=0.1349, l4=0.1349):
    """GLaM with lambda1 given as {multi-index: coefficient}, other parameters constant."""
    rows = sorted(l1_terms, key=lambda t: (sum(t), [-v for v in t]))
    lam1 = PceModel(BasisSet(np.array(rows), 1, 1.0), [l1_terms[r] for r in rows], im)
    return GlamModel(lam1, PceModel.constant(log_l2, im), PceModel.constant(l3, im),
                     PceModel.constant(l4, im))


ADDITIVE = _glam(IM2, {(0, 0): 1.0, (1, 0): SLOPE, (0, 1): SLOPE}, log_l2=20.0)


class TestQoiSpec:
    @pytest.mark.parametrize("text,kind,param", [
        ("mean", "mean", None), ("quantile(0.95)", "quantile", 0.95),
        ("superquantile:0.9", "superquantile", 0.9), ("entropy", "entropy", 10**4),
        ("expected_payoff", "expected_payoff", 1.0)])
    def test_parse(self, text, kind, param):
        q = sens.QoiSpec.parse(text)
        assert (q.kind, q.param) == (kind, param)

    @pytest.mark.parametrize("args", [("quantile", 1.5), ("quantile", None), ("entropy", 0),
                                      ("mean", 0.3), ("median", None)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            sens.QoiSpec(*args)

    def test_label(self):
        assert sens.QoiSpec("superquantile", 0.95).label == "superquantile(0.95)"


class TestSurfaces:
    def test_median_equals_location(self):
        g = _glam(IM2, {(0, 0): 2.0, (1, 0): 0.3, (0, 1): -0.1})
        X = IM2.sample(np.random.default_rng(0), 50)
        med = sens.qoi_surface(g, sens.QoiSpec("quantile", 0.5))(X)
        np.testing.assert_allclose(med, glam.predict_lambda(g, X).lambda1, atol=1e-12)

    def test_closed_forms(self):
        g = _glam(IM2, {(0, 0): 2.0, (1, 0): 0.3}, log_l2=0.4, l3=0.2, l4=0.05)
        X = IM2.sample(np.random.default_rng(1), 5)
        p = glam.predict_lambda(g, X)
        np.testing.assert_allclose(sens.qoi_surface(g, sens.QoiSpec("mean"))(X), gld.mean(p))
        np.testing.assert_allclose(sens.qoi_surface(g, sens.QoiSpec("std"))(X), np.sqrt(gld.variance(p)))
        np.testing.assert_allclose(sens.qoi_surface(g, sens.QoiSpec("superquantile", 0.9))(X),
                                   gld.superquantile(p, 0.9))

    def test_entropy_deterministic(self):
        g = _glam(IM2, {(0, 0): 0.0, (1, 0): 1.0}, log_l2=math.log(0.1975 / 0.1349))
        X = IM2.sample(np.random.default_rng(2), 4)
        f = sens.qoi_surface(g, sens.QoiSpec("entropy"), seed=7)
        a = f(X)
        np.testing.assert_array_equal(a, f(X))
        np.testing.assert_array_equal(a[::-1], f(X[::-1]))  # streams follow x, not row order
        assert not np.array_equal(a, sens.qoi_surface(g, sens.QoiSpec("entropy"), seed=8)(X))
        # close to the normal entropy 0.5 log(2 pi e) = 1.4189
        np.testing.assert_allclose(a, 1.4189, atol=0.03)

    def test_moment_error_propagates(self):
        g = _glam(IM2, {(0, 0): 0.0}, l3=-0.7)
        with pytest.raises(MomentUndefinedError):
            sens.qoi_surface(g, sens.QoiSpec("variance"))([[0.5, 0.5]])


class TestPickFreeze:
    def test_additive_deterministic_emulator(self):
        rep = sens.classical_sobol_pickfreeze(ADDITIVE, n_mc=10**5, rng=np.random.default_rng(3))
        assert rep.get("first", (0,)) == pytest.approx(0.5, abs=0.02)
        assert rep.get("first", (1,)) == pytest.approx(0.5, abs=0.02)
        assert rep.get("closed", (0, 1)) == pytest.approx(1.0, abs=0.02)

    def test_pure_interaction(self):
        im = uniform_model([(-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)])
        rep = sens.sobol_pickfreeze(lambda X: X[:, 0] * X[:, 1], im, 10**5, np.random.default_rng(4),
                                    max_order=2)
        assert rep.get("first", (0,)) == pytest.approx(0.0, abs=0.02)
        assert rep.get("interaction", (0, 1)) == pytest.approx(1.0, abs=0.03)
        assert rep.get("interaction", (0, 2)) == pytest.approx(0.0, abs=0.03)
        assert rep.get("total", (2,)) == pytest.approx(0.0, abs=0.02)

    def test_latent_noise_lowers_explained_share(self):
        g = _glam(IM2, {(0, 0): 0.0, (1, 0): 1.0}, log_l2=0.0)
        rep = sens.classical_sobol_pickfreeze(g, n_mc=10**5, rng=np.random.default_rng(5))
        var_noise = gld.variance(GldParams(0, 1, 0.1349, 0.1349))
        assert rep.get("closed", (0, 1)) == pytest.approx(1 / (1 + var_noise), abs=0.02)
        assert rep.get("total", (1,)) == pytest.approx(0.0, abs=0.02)

    def test_small_budget(self):
        with pytest.raises(DomainError):
            sens.classical_sobol_pickfreeze(ADDITIVE, n_mc=50)

    def test_kinds_subset(self):
        rep = sens.sobol_pickfreeze(lambda X: X[:, 0], IM2, 10**4, np.random.default_rng(6), kinds=("total",))
        assert rep.get("total", (0,)) == pytest.approx(1.0, abs=0.05)
        assert rep.get("total", (1,)) == pytest.approx(0.0, abs=1e-12)
        with pytest.raises(KeyError):
            rep.get("first", (0,))
        with pytest.raises(DomainError):
            sens.sobol_pickfreeze(lambda X: X[:, 0], IM2, 1000, np.random.default_rng(6), kinds=("second",))

    def test_black_box_simulator(self):
        # y = x1 + noise with Var(x1) = Var(noise): S1 = 1/2, S2 = 0, closed = 1/2
        im = uniform_model([(0.0, 1.0), (0.0, 1.0)])

        def sim(X, rng):
            return X[:, 0] + rng.uniform(0.0, 1.0, len(X))

        rep = sens.classical_sobol_simulator(sim, im, 10**5, np.random.default_rng(7))
        assert rep.vector("first") == pytest.approx([0.5, 0.0], abs=0.02)
        assert rep.get("closed", (0, 1)) == pytest.approx(0.5, abs=0.02)

    def test_zero_variance(self):
        with pytest.raises(UndefinedIndexError):
            sens.sobol_pickfreeze(lambda X: np.zeros(len(X)), IM2, 200, np.random.default_rng(0))


class TestPceRoute:
    def test_linear_surface_matches_pick_freeze(self):
        g = _glam(IM2, {(0, 0): 1.0, (1, 0): 0.8, (0, 1): 0.3})
        q = sens.QoiSpec("mean")
        rep, loo = sens.qoi_sobol_pce(g, q, np.random.default_rng(6), settings=FAST_PCE)
        assert loo < 1e-10
        pf = sens.sobol_pickfreeze(sens.qoi_surface(g, q), IM2, 10**5, np.random.default_rng(7))
        for i in range(2):
            assert rep.get("first", (i,)) == pytest.approx(pf.get("first", (i,)), abs=0.01)
        assert rep.get("first", (0,)) == pytest.approx(0.64 / 0.73, abs=1e-8)

    def test_single_variable_dependence(self):
        g = _glam(IM2, {(0, 0): 1.0, (1, 0): 0.8})
        rep, _ = sens.qoi_sobol_pce(g, sens.QoiSpec("quantile", 0.9), np.random.default_rng(8),
                                    settings=FAST_PCE)
        assert rep.get("total", (1,)) == 0.0

    def test_x_independent_classical(self):
        g = _glam(IM2, {(0, 0): 1.0}, log_l2=0.5, l3=0.3, l4=0.1)
        rep, _ = sens.classical_sobol_pce(g, np.random.default_rng(9), settings=FAST_PCE)
        # LOO selection may keep x terms that fit the residual of the
        # polynomial approximation in u; they carry negligible variance
        for i in range(2):
            assert rep.get("first", (i,)) == pytest.approx(0.0, abs=1e-3)
            assert rep.get("total", (i,)) == pytest.approx(0.0, abs=1e-3)
        assert rep.variables == ["x1", "x2"]

    def test_classical_agrees_with_pick_freeze(self):
        g = _glam(IM2, {(0, 0): 1.0, (1, 0): 1.0, (0, 1): 0.5}, log_l2=0.3, l3=0.3, l4=0.25)
        rep, loo = sens.classical_sobol_pce(g, np.random.default_rng(10),
                                            settings=sens.PceSettings(n_pc=5000, degrees=range(1, 7)))
        assert loo < 1e-3
        pf = sens.classical_sobol_pickfreeze(g, n_mc=10**5, rng=np.random.default_rng(11))
        for kind in ("first", "total"):
            for i in range(2):
                assert rep.get(kind, (i,)) == pytest.approx(pf.get(kind, (i,)), abs=0.02)
        assert rep.get("closed", (0, 1)) == pytest.approx(pf.get("closed", (0, 1)), abs=0.02)

    def test_index_bounds(self):
        g = _glam(IM2, {(0, 0): 1.0, (1, 0): 1.0, (0, 1): 0.5}, log_l2=0.3)
        rep, _ = sens.classical_sobol_pce(g, np.random.default_rng(12), settings=FAST_PCE)
        for i in range(2):
            assert 0 <= rep.get("first", (i,)) <= rep.get("total", (i,)) <= 1

    def test_loo_warning_flag(self):
        g = _glam(IM2, {(0, 0): 1.0, (1, 0): 1.0}, log_l2=0.3)
        settings = sens.PceSettings(n_pc=200, degrees=[1], loo_threshold=1e-12)
        rep, loo = sens.classical_sobol_pce(g, np.random.default_rng(13), settings=settings)
        assert rep.metadata["loo_warning"] and loo > 1e-12

    def test_budget(self):
        with pytest.raises(DomainError):
            sens.qoi_sobol_pce(ADDITIVE, sens.QoiSpec("mean"), np.random.default_rng(0),
                               settings=sens.PceSettings(n_pc=10))


class TestBootstrap:
    @staticmethod
    def _products(n, rng):
        im = uniform_model([(0.0, 1.0), (0.0, 1.0)])
        _, samples = sens.sobol_pickfreeze(lambda X: X[:, 0] + 2 * X[:, 1], im, n, rng, keep_samples=True)
        return samples.y, samples.frozen[("first", (0,))]

    def test_single_replicate(self):
        y, yu = self._products(500, np.random.default_rng(0))
        lo, hi = sens.bootstrap_ci(y, yu, n_boot=1)
        assert lo == hi == pytest.approx(sens.janon(y, yu))

    def test_width_scaling(self):
        widths = []
        for n in (10**3, 10**4, 10**5):
            y, yu = self._products(n, np.random.default_rng(n))
            lo, hi = sens.bootstrap_ci(y, yu, n_boot=200, rng=np.random.default_rng(1))
            widths.append(hi - lo)
        ratios = np.array(widths[:-1]) / np.array(widths[1:])
        assert np.all((ratios > 2.0) & (ratios < 5.0))  # sqrt(10) = 3.16

    def test_coverage(self):
        rng = np.random.default_rng(2)
        hits = 0
        for _ in range(100):
            y, yu = self._products(1000, rng)
            lo, hi = sens.bootstrap_ci(y, yu, n_boot=300, rng=rng)
            hits += lo <= 0.2 <= hi
        assert hits >= 90

    def test_report_intervals(self):
        rep = sens.classical_sobol_pickfreeze(ADDITIVE, n_mc=2000, rng=np.random.default_rng(3), n_boot=50)
        for e in rep.entries:
            if e.kind in ("first", "total"):
                assert e.ci[0] <= e.ci[1]


class TestSnr:
    def test_glam_matches_analytic(self):
        g = _glam(IM2, {(0, 0): 0.0, (1, 0): 1.0, (0, 1): 0.5}, log_l2=0.2, l3=0.2, l4=0.1)
        noise = gld.variance(GldParams(0, math.exp(0.2), 0.2, 0.1))
        expected = 1.25 / noise
        assert sens.snr(g, np.random.default_rng(4), n_mc=2 * 10**5) == pytest.approx(expected, rel=0.05)

    def test_replicated_toy(self):
        rng = np.random.default_rng(5)
        im = sims.toy_input_model()
        X = im.sample(rng, 500)
        Y = sims.toy_eval(np.repeat(X, 200, axis=0), rng).reshape(500, 200)
        assert sens.snr(Y) == pytest.approx(1.4, rel=0.1)

    def test_replicated_shape(self):
        with pytest.raises(DomainError):
            sens.snr_replicated(np.ones((5, 1)))

    def test_small_budget(self):
        with pytest.raises(DomainError):
            sens.snr(ADDITIVE, np.random.default_rng(0), n_mc=10)


class TestErrorMetrics:
    g = _glam(IM2, {(0, 0): 0.0, (1, 0): 1.0}, log_l2=0.2)

    def test_exact_reference(self):
        ref = lambda u, X: glam.emulator_quantile(self.g, u, X)  # noqa: E731
        assert sens.error_q_metric(self.g, ref, np.random.default_rng(0), n_test=1000) == pytest.approx(0.0, abs=1e-20)
        q = sens.QoiSpec("mean")
        assert sens.error_qoi_metric(self.g, sens.qoi_surface(self.g, q), q, np.random.default_rng(1),
                                     n_test=1000) == pytest.approx(0.0, abs=1e-20)

    def test_offset_reference(self):
        q = sens.QoiSpec("mean")
        surf = sens.qoi_surface(self.g, q)
        err = sens.error_qoi_metric(self.g, lambda X: surf(X) + 1.0, q, np.random.default_rng(2), n_test=10**4)
        assert err == pytest.approx(1.0, rel=0.05)  # Var of the mean surface is 1

    def test_constant_reference(self):
        with pytest.raises(UndefinedIndexError):
            sens.error_q_metric(self.g, lambda u, X: np.ones(len(u)), np.random.default_rng(0), n_test=100)
