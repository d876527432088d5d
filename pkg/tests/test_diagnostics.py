import numpy as np
import pytest

from sfpca.diagnostics import ess, ess_bulk, mcse_mean, split_rhat, summarize


def ar1(rng, phi, chains, n):
    x = np.empty((chains, n))
    x[:, 0] = rng.standard_normal(chains) / np.sqrt(1 - phi ** 2)
    for t in range(1, n):
        x[:, t] = phi * x[:, t - 1] + rng.standard_normal(chains)
    return x


class TestRhat:
    def test_iid_near_one(self):
        x = np.random.default_rng(0).standard_normal((4, 1000))
        assert abs(split_rhat(x) - 1) < 0.01

    def test_shifted_chain_detected(self):
        x = np.random.default_rng(1).standard_normal((4, 500))
        x[0] += 2
        assert split_rhat(x) > 1.1

    def test_trend_within_chain_detected(self):
        # split halves catch drift that whole-chain R-hat would miss
        x = np.random.default_rng(2).standard_normal((4, 500)) + np.linspace(0, 3, 500)
        assert split_rhat(x) > 1.1

    def test_degenerate(self):
        assert np.isnan(split_rhat(np.ones((4, 100))))
        assert np.isnan(split_rhat(np.zeros(100)))


class TestEss:
    def test_iid(self):
        x = np.random.default_rng(3).standard_normal((4, 2000))
        assert ess(x) == pytest.approx(8000, rel=0.1)

    @pytest.mark.parametrize("phi", [0.5, 0.9])
    def test_ar1_matches_theory(self, phi):
        x = ar1(np.random.default_rng(4), phi, 4, 5000)
        assert ess(x) == pytest.approx(20000 * (1 - phi) / (1 + phi), rel=0.15)

    def test_bulk_invariant_to_monotone_transform(self):
        x = ar1(np.random.default_rng(5), 0.5, 4, 1000)
        assert ess_bulk(x) == pytest.approx(ess_bulk(np.exp(x)), rel=1e-12)

    def test_mcse_mean_iid(self):
        x = np.random.default_rng(6).standard_normal((4, 2500))
        assert mcse_mean(x) == pytest.approx(0.01, rel=0.1)


def test_summarize_flags_and_degenerate():
    rng = np.random.default_rng(7)
    d = rng.standard_normal((4, 400, 3))
    d[0, :, 1] += 3
    d[:, :, 2] = 1.0
    rep = summarize(d, ["a", "b", "c"])
    assert "b" in rep["flagged"] and "a" not in rep["flagged"]
    assert rep["params"][2]["status"] == "degenerate"
    assert rep["max_rhat"] > 1.1
