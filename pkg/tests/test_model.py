import numpy as np
import pytest
from scipy import stats

from sfpca.model import ModelEvaluationError, ModelSpec, ModelSpecError, Params
from sfpca.nuts import check_gradient


def oracle_log_posterior(spec, x):
    """Direct sum of scipy log densities, observation by observation."""
    p = spec.unpack(x)
    lp = stats.norm.logpdf(p.theta_mu).sum() + stats.norm.logpdf(p.Theta).sum()
    lp += stats.norm.logpdf(p.alpha).sum()
    lp += stats.halfcauchy.logpdf(p.sigma) + p.log_sigma
    for i in range(spec.N):
        B = spec.subject_design(i)
        mean = B @ (p.theta_mu + p.Theta @ p.alpha[i])
        y = spec.y[spec.starts[i]:spec.starts[i] + spec.n_obs[i]]
        lp += stats.norm.logpdf(y, mean, p.sigma).sum()
    return lp


def _points(spec, n, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    return [rng.normal(0, scale, spec.dim) for _ in range(n)]


class TestDensity:
    def test_against_scipy_oracle(self, small_spec):
        for x in _points(small_spec, 5):
            assert small_spec.log_posterior(x) == pytest.approx(oracle_log_posterior(small_spec, x), abs=1e-9)

    def test_sufficient_statistics_match_dense(self, small_spec):
        for x in _points(small_spec, 5, seed=1):
            lp, g = small_spec.logp_and_grad(x)
            lpd, gd = small_spec.logp_and_grad_dense(x)
            assert lp == pytest.approx(lpd, abs=1e-9)
            np.testing.assert_allclose(g, gd, rtol=1e-10, atol=1e-10)
            assert lp == pytest.approx(small_spec.log_posterior(x), abs=1e-9)

    def test_gradient_finite_differences(self, small_spec):
        for x in _points(small_spec, 5, seed=2):
            ok, worst = check_gradient(small_spec.logp_and_grad, x)
            assert ok, worst

    def test_pointwise_sums_to_likelihood(self, small_spec):
        x = _points(small_spec, 1, seed=3)[0]
        assert small_spec.pointwise_loglik(x).sum() == pytest.approx(small_spec.log_likelihood(x), abs=1e-9)
        obs = small_spec.pointwise_loglik(x, unit="observation")
        assert obs.size == small_spec.y.size
        X = np.stack(_points(small_spec, 3, seed=4))
        np.testing.assert_allclose(small_spec.pointwise_loglik_draws(X)[1], small_spec.pointwise_loglik(X[1]))

    def test_non_finite_and_shape(self, small_spec):
        x = np.zeros(small_spec.dim)
        x[0] = np.nan
        with pytest.raises(ModelEvaluationError):
            small_spec.log_posterior(x)
        with pytest.raises(ModelSpecError):
            small_spec.log_posterior(np.zeros(3))


class TestMarginal:
    def test_matches_multivariate_normal(self, small_spec):
        X = np.stack(_points(small_spec, 4, seed=5, scale=0.7))
        got = small_spec.marginal_loglik_draws(X, chunk=3)
        d = small_spec.unpack_draws(X)
        for s in range(X.shape[0]):
            for i in range(small_spec.N):
                B = small_spec.subject_design(i)
                y = small_spec.y[small_spec.starts[i]:small_spec.starts[i] + small_spec.n_obs[i]]
                T = d["Theta"][s]
                cov = d["sigma"][s] ** 2 * np.eye(B.shape[0]) + B @ T @ T.T @ B.T
                ref = stats.multivariate_normal(B @ d["theta_mu"][s], cov).logpdf(y)
                assert got[s, i] == pytest.approx(ref, abs=1e-9)

    def test_ignores_scores(self, small_spec):
        X = np.stack(_points(small_spec, 2, seed=6))
        Y = X.copy()
        a = small_spec.q + small_spec.q * small_spec.k
        Y[:, a:-1] = 0.0
        np.testing.assert_array_equal(small_spec.marginal_loglik_draws(X), small_spec.marginal_loglik_draws(Y))


class TestSpec:
    def test_pack_roundtrip(self, small_spec):
        x = _points(small_spec, 1, seed=7)[0]
        np.testing.assert_array_equal(small_spec.pack(small_spec.unpack(x)), x)
        assert len(small_spec.param_names()) == small_spec.dim
        assert small_spec.param_names()[-1] == "log_sigma"

    def test_dimension(self, small_spec):
        q, k, N = small_spec.q, small_spec.k, small_spec.N
        assert small_spec.dim == q + q * k + N * k + 1

    def test_k_must_be_below_q(self, small_data, basis1):
        with pytest.raises(ModelSpecError):
            ModelSpec.from_data(small_data, basis1, basis1.q)

    def test_params_sigma(self):
        assert Params(np.zeros(1), np.zeros((1, 1)), np.zeros((1, 1)), np.log(2.0)).sigma == pytest.approx(2.0)
