import numpy as np
import pytest
from scipy.stats import poisson

from sfpca.basis import build_basis
from sfpca.rotate import rotate_all
from sfpca.simulate import (ScoringError, SimulationTruth, TruthError, default_truth, draw_visit_counts, generate,
                            load_truth, raw_scale_mean_coefs, save_truth, score_recovery, visit_rate)


class TestTruth:
    def test_default(self):
        t = default_truth()
        assert (t.q, t.k) == (5, 2)
        np.testing.assert_allclose(t.Theta.T @ t.Theta, np.eye(2), atol=1e-10)

    def test_scenario(self):
        t = default_truth().with_scenario(N=25, missing=0.8)
        assert t.N == 25 and t.missingness == pytest.approx(0.8)

    def test_roundtrip(self, tmp_path):
        t = default_truth()
        save_truth(t, tmp_path / "t.json")
        u = load_truth(tmp_path / "t.json")
        np.testing.assert_array_equal(u.Theta, t.Theta)
        assert u.sigma2 == t.sigma2

    def test_validation(self):
        t = default_truth()
        with pytest.raises(TruthError):
            SimulationTruth(t.theta_mu, 2 * t.Theta, t.D, t.sigma2)
        with pytest.raises(TruthError):
            SimulationTruth(t.theta_mu[:3], t.Theta, t.D, t.sigma2)
        with pytest.raises(TruthError):
            SimulationTruth(t.theta_mu, t.Theta, t.D, t.sigma2, mu_T=20.0)


class TestVisits:
    @pytest.mark.parametrize("mu", [2.0, 5.0, 8.0])
    def test_truncated_mean_is_calibrated(self, mu):
        lam = visit_rate(mu, 10)
        ks = np.arange(1, 11)
        pmf = poisson.pmf(ks, lam)
        assert pmf @ ks / pmf.sum() == pytest.approx(mu, abs=1e-9)

    def test_empirical_missingness(self):
        n = draw_visit_counts(np.random.default_rng(0), 20000, 2.0, 10)
        assert n.min() >= 1 and n.max() <= 10
        assert 1 - n.mean() / 10 == pytest.approx(0.8, abs=0.01)

    def test_full_observation(self):
        np.testing.assert_array_equal(draw_visit_counts(np.random.default_rng(0), 5, 10.0, 10), 10)


class TestGenerate:
    def test_deterministic(self):
        t = default_truth().with_scenario(N=10, missing=0.5, seed=3)
        assert generate(t).data.triples() == generate(t).data.triples()

    def test_times_on_slots_without_replacement(self):
        sim = generate(default_truth().with_scenario(N=30, missing=0.6, seed=4))
        slots = set(np.linspace(0, 1, 10).tolist())
        for s in sim.data.subjects:
            assert set(s.times.tolist()) <= slots
            assert len(set(s.times.tolist())) == s.n_obs

    def test_noise_free_limit(self):
        t = default_truth().with_scenario(N=5, seed=5)
        t.sigma2 = 0.0
        sim = generate(t)
        curves = sim.true_curves(np.linspace(0, 1, 10))
        for i, s in enumerate(sim.data.subjects):
            np.testing.assert_allclose(s.values, curves[i], atol=1e-12)


class TestScoring:
    def _perfect(self, truth, S=4, N=3):
        # loadings carry the score scale, as in a fit
        T = np.repeat((truth.Theta * np.sqrt(truth.D))[None], S, 0)
        rd = rotate_all(np.repeat(truth.theta_mu[None], S, 0), T, np.ones((S, N, truth.k)), np.ones(S))
        return rd

    def test_truth_scores_zero(self):
        t = default_truth()
        sc = score_recovery(self._perfect(t), t, t.basis())
        assert sc.mse_mean == pytest.approx(0, abs=1e-20)
        assert sc.mse_fpc < 1e-20 and sc.mse_fpc_curve < 1e-20

    def test_shape_mismatch(self):
        t = default_truth()
        with pytest.raises(ScoringError):
            score_recovery(self._perfect(t), t, build_basis([0.3, 0.6]))

    def test_raw_scale_coefficients(self):
        b = build_basis([0.4])
        theta = np.random.default_rng(6).standard_normal(b.q)
        x = np.linspace(0, 1, 33)
        np.testing.assert_allclose(b.evaluate(x) @ raw_scale_mean_coefs(theta, b, 3.0, 2.0),
                                   2.0 * (b.evaluate(x) @ theta) + 3.0, atol=1e-10)
