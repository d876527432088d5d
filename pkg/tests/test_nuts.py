import numpy as np
import pytest

from sfpca import diagnostics
from sfpca.nuts import (DualAveraging, SamplerConfig, SamplerConfigError, SamplerInitError, WindowedMetric,
                        _Point, check_gradient, hamiltonian, leapfrog, sample, transition, uniforms_needed)
from sfpca.nuts_jit import gaussian_kernel

MEAN = np.array([1.0, -2.0, 0.5, 3.0, 0.0])
SD = np.array([1.0, 0.5, 2.0, 0.1, 5.0])


def gaussian(mean, sd):
    def logp_grad(x):
        z = (x - mean) / sd
        return -0.5 * float(z @ z), -z / sd
    return logp_grad


class TestConfig:
    @pytest.mark.parametrize("kw", [{"chains": 0}, {"iters": 0}, {"warmup": 100}, {"target_accept": 1.0},
                                    {"max_treedepth": 0}])
    def test_rejects(self, kw):
        with pytest.raises(SamplerConfigError):
            SamplerConfig(**kw)

    def test_no_adapt_allows_short_warmup(self):
        assert SamplerConfig(warmup=0, adapt=False).warmup == 0


class TestIntegrator:
    def test_reversible(self):
        lg = gaussian(MEAN, SD)
        inv = np.ones(5)
        x = np.zeros(5)
        lp, g = lg(x)
        z = _Point(x, np.arange(5.0) / 5, lp, g)
        for _ in range(10):
            z = leapfrog(lg, z, 0.05, inv)
        z = _Point(z.x, -z.p, z.lp, z.grad)
        for _ in range(10):
            z = leapfrog(lg, z, 0.05, inv)
        np.testing.assert_allclose(z.x, x, atol=1e-12)

    def test_one_step_energy_error_is_third_order(self):
        # 1-D quartic-plus-quadratic target: no exact conservation by accident
        def lg(x):
            return -float(0.5 * x @ x + 0.25 * (x ** 4).sum()), -(x + x ** 3)

        inv = np.ones(1)
        x = np.array([0.7])
        lp, g = lg(x)
        z0 = _Point(x, np.array([0.4]), lp, g)
        H0 = hamiltonian(z0, inv)
        errs = [abs(hamiltonian(leapfrog(lg, z0, e, inv), inv) - H0) for e in (0.02, 0.01, 0.005)]
        rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        np.testing.assert_allclose(rates, 3.0, atol=0.15)


class TestAdaptation:
    def test_dual_averaging_converges(self):
        # accept = exp(-eps) has its 0.8 target at eps = -log(0.8)
        da = DualAveraging(0.8)
        da.restart(1.0)
        eps = 1.0
        for _ in range(2000):
            eps = da.update(np.exp(-eps))
        assert da.final() == pytest.approx(-np.log(0.8), rel=0.05)

    def test_metric_windows(self):
        m = WindowedMetric(2, 1000)
        ends = [i for i in range(1000) if m.observe(np.zeros(2)) is not None]
        assert ends == [99, 149, 249, 449, 949]

    def test_metric_estimates_variance(self):
        rng = np.random.default_rng(0)
        m = WindowedMetric(2, 1000)
        last = None
        for _ in range(1000):
            v = m.observe(rng.normal(0, [1.0, 3.0]))
            last = v if v is not None else last
        np.testing.assert_allclose(last, [1.0, 9.0], rtol=0.15)


class TestTransition:
    def test_python_and_compiled_agree(self):
        lg = gaussian(MEAN, SD)
        data = (MEAN, SD)
        x = np.array([0.3, -1.0, 2.0, 3.05, -4.0])
        lp, g = lg(x)
        inv = SD ** 2
        for seed in range(5):
            a = transition(lg, x, lp, g, 0.4, inv, np.random.default_rng(seed), 6)
            b = transition(lg, x, lp, g, 0.4, inv, np.random.default_rng(seed), 6, jit=(gaussian_kernel, data))
            np.testing.assert_allclose(a[0], b[0], rtol=1e-12, atol=1e-12)
            assert a[3] == pytest.approx(b[3], rel=1e-12)
            assert a[4:] == tuple(b[4:])

    def test_uniform_budget(self):
        assert uniforms_needed(10) == 1024 + 20

    def test_depth_bounded(self):
        lg = gaussian(np.zeros(3), np.ones(3))
        x = np.zeros(3)
        lp, g = lg(x)
        out = transition(lg, x, lp, g, 1e-4, np.ones(3), np.random.default_rng(0), 3)
        assert out[4] == 3 and out[5] == 7


class TestSample:
    def test_gaussian_moments(self):
        cfg = SamplerConfig(chains=4, warmup=500, iters=1000, seed=3)
        res = sample(gaussian(MEAN, SD), 5, cfg)
        for j in range(5):
            x = res.draws[:, :, j]
            assert abs(x.mean() - MEAN[j]) < 4 * diagnostics.mcse_mean(x)
            assert abs(x.var() - SD[j] ** 2) < 4 * diagnostics.mcse_var(x)
        assert res.divergent.sum() == 0

    def test_deterministic(self):
        cfg = SamplerConfig(chains=2, warmup=150, iters=50, seed=11)
        a = sample(gaussian(MEAN, SD), 5, cfg)
        b = sample(gaussian(MEAN, SD), 5, cfg)
        assert np.array_equal(a.draws, b.draws)
        c = sample(gaussian(MEAN, SD), 5, SamplerConfig(chains=2, warmup=150, iters=50, seed=12))
        assert not np.array_equal(a.draws, c.draws)

    def test_compiled_path_moments(self):
        cfg = SamplerConfig(chains=4, warmup=300, iters=500, seed=5)
        res = sample(gaussian(MEAN, SD), 5, cfg, jit=(gaussian_kernel, (MEAN, SD)))
        assert np.all(np.abs(res.flat().mean(axis=0) - MEAN) < 5 * SD / np.sqrt(400))

    def test_bad_init(self):
        def lg(x):
            return -np.inf, np.zeros_like(x)
        with pytest.raises(SamplerInitError):
            sample(lg, 2, SamplerConfig(chains=1, warmup=150, iters=10))

    def test_explicit_init(self):
        cfg = SamplerConfig(chains=1, warmup=0, iters=1, adapt=False, init_step_size=1e-8)
        res = sample(gaussian(MEAN, SD), 5, cfg, init=MEAN)
        np.testing.assert_allclose(res.draws[0, 0], MEAN, atol=1e-4)


def test_check_gradient_detects_error():
    def wrong(x):
        return -0.5 * float(x @ x), -2 * x
    ok, _ = check_gradient(wrong, np.ones(3))
    assert not ok
    assert check_gradient(gaussian(MEAN, SD), np.ones(5))[0]
