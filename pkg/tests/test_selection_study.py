import math

import numpy as np
import pytest

from sfpca import study
from sfpca.basis import build_basis
from sfpca.exact_loo import exact_loo
from sfpca.fit import prepare
from sfpca.nuts import SamplerConfig
from sfpca.selection import GridError, cell_seed, parse_range, select_models, validate_grid
from sfpca.simulate import default_truth, generate

FAST = SamplerConfig(chains=2, warmup=150, iters=100, seed=4)


class TestGrid:
    def test_parse_range(self):
        assert parse_range("2") == [2]
        assert parse_range("1:3") == [1, 2, 3]
        assert parse_range(4) == [4]
        for bad in ("3:1", "a", "1:2:3"):
            with pytest.raises(GridError):
                parse_range(bad)

    def test_validate(self):
        assert validate_grid([1, 2], [0]) == [(1, 0), (2, 0)]
        with pytest.raises(GridError):
            validate_grid([4], [0])
        with pytest.raises(GridError):
            validate_grid([0], [1])

    def test_cell_seeds_distinct(self):
        seeds = {cell_seed(1, k, m) for k in range(1, 4) for m in range(1, 4)}
        assert len(seeds) == 9


@pytest.fixture(scope="module")
def selection():
    sim = generate(default_truth().with_scenario(N=25, seed=8))
    # 100 draws per chain leave the 1-PC cell above the exclusion threshold; 300 do not
    cfg = SamplerConfig(chains=2, warmup=150, iters=300, seed=4)
    return select_models(sim.data, [1, 2], [1], cfg, time_range=(0, 1))


class TestSelect:
    def test_table(self, selection):
        assert len(selection.cells) == 2
        t = selection.table
        assert t[0]["delta"] == 0.0
        assert {(r["pcs"], r["knots"]) for r in t} == {(1, 1), (2, 1)}
        assert selection.recommended is not None

    def test_two_components_preferred(self, selection):
        # truth has two components with clearly separated score variances
        assert selection.best.k == 2

    def test_shared_standardization(self, selection):
        a, b = (c.fit.prepared.standardization for c in selection.cells)
        assert a == b

    def test_failed_cells_excluded(self):
        sim = generate(default_truth().with_scenario(N=10, seed=9))
        sel = select_models(sim.data, [1, 2], [1], FAST, time_range=(0, 1), rhat_fail=0.5)
        assert all(c.failed for c in sel.cells)
        assert sel.recommended is None and sel.table == []


class TestStudy:
    def test_rep_seeds(self):
        assert study.rep_seeds(1, 0, 0) == study.rep_seeds(1, 0, 0)
        assert len({study.rep_seeds(1, s, r) for s in range(3) for r in range(5)}) == 15

    def test_run_rep_row(self):
        truth = default_truth().with_scenario(N=15, missing=0.5)
        out = study.run_rep(truth, 0, 0, 7, FAST, keep=True)
        row = out.row
        assert set(study.RESULT_FIELDS) <= set(row)
        assert row["status"] in ("ok", "warning")
        assert row["MSE_mean"] >= 0 and row["MSE_fpc"] >= 0
        assert out.fit is not None and out.sim.data.n_subjects == 15

    def test_failure_recorded(self, monkeypatch):
        def boom(*a, **k):
            raise RuntimeError("sampler exploded")
        monkeypatch.setattr(study, "fit_sfpca", boom)
        rows = study.run_grid([default_truth().with_scenario(N=5)], 2, 0, FAST)
        assert [r["status"] for r in rows] == ["failed", "failed"]
        assert "sampler exploded" in rows[0]["error"]
        assert study.failure_rate(rows) == 1.0
        assert study.summarize_grid(rows) == []

    def test_summarize(self):
        rows = [{"scenario": 0, "N": 5, "missing": 0.0, "status": "ok", "MSE_mean": m, "MSE_fpc": 2 * m,
                 "MSE_mean_curve": 3 * m} for m in (1.0, 3.0)]
        s = study.summarize_grid(rows)[0]
        assert s["MSE_mean"] == 2.0 and s["MSE_fpc"] == 4.0 and s["reps"] == 2

    def test_reps_validated(self):
        with pytest.raises(ValueError):
            study.run_grid([], 0)


class TestExactLoo:
    def test_single_subject_prior_predictive(self):
        sim = generate(default_truth().with_scenario(N=1, seed=2))
        pp = prepare(sim.data, (0, 1), do_standardize=False)
        cfg = SamplerConfig(chains=2, warmup=150, iters=500, seed=0)
        ex = exact_loo(pp, build_basis([0.5]), 2, cfg)
        assert math.isfinite(ex.elppd) and ex.pointwise.shape == (1,)
        assert ex.unit_ids == sim.data.subject_ids

    @pytest.mark.filterwarnings("ignore:.*diverged:RuntimeWarning")
    def test_refits(self):
        sim = generate(default_truth().with_scenario(N=3, missing=0.5, seed=3))
        ex = exact_loo(sim.data, build_basis([0.5]), 1, FAST, time_range=(0, 1))
        assert ex.pointwise.shape == (3,) and np.all(np.isfinite(ex.pointwise))
        assert ex.elppd == pytest.approx(ex.pointwise.sum())
        assert ex.mcse == pytest.approx(math.sqrt(np.sum(ex.pointwise_mcse ** 2)))
        assert isinstance(ex.failed, list)
