import numpy as np
import pytest

from sfpca.basis import build_basis
from sfpca.data import from_arrays
from sfpca.fit import fit_sfpca
from sfpca.model import ModelSpec
from sfpca.nuts import SamplerConfig
from sfpca.simulate import default_truth, generate

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(number: int, passed: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_dataset(N=6, n_max=5, seed=0):
    """Small irregular dataset with times in [0, 1]."""
    rng = np.random.default_rng(seed)
    ids, ts, ys = [], [], []
    for i in range(N):
        n = int(rng.integers(2, n_max + 1))
        t = np.sort(rng.choice(np.linspace(0, 1, 11), size=n, replace=False))
        ids += [f"s{i}"] * n
        ts += list(t)
        ys += list(np.sin(2 * np.pi * t) + 0.3 * rng.standard_normal() + 0.1 * rng.standard_normal(n))
    return from_arrays(ids, ts, ys)


@pytest.fixture(scope="session")
def small_data():
    return make_dataset()


@pytest.fixture(scope="session")
def basis1():
    return build_basis([0.5])


@pytest.fixture(scope="session")
def small_spec(small_data, basis1):
    return ModelSpec.from_data(small_data, basis1, 2)


@pytest.fixture(scope="session")
def sim_small():
    return generate(default_truth().with_scenario(N=30, missing=0.3, seed=1))


@pytest.fixture(scope="session")
def small_fit(sim_small):
    cfg = SamplerConfig(chains=2, warmup=200, iters=200, seed=1)
    return fit_sfpca(sim_small.data, 2, knots=[0.5], time_range=(0, 1), config=cfg)
