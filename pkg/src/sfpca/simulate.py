"""Synthetic sparse longitudinal data from a known SFPCA truth, and recovery scoring."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.stats import poisson

from .basis import OrthonormalBasis, build_basis
from .data import LongitudinalDataset, Subject
from .rotate import RotatedDraws, _match


class TruthError(ValueError):
    pass


class ScoringError(ValueError):
    pass


@dataclass
class SimulationTruth:
    """Ground-truth generator parameters on the raw outcome scale.

    ``mu_T >= N_T`` means every subject is observed at every candidate time.
    """

    theta_mu: np.ndarray
    Theta: np.ndarray
    D: np.ndarray
    sigma2: float
    N: int = 100
    N_T: int = 10
    mu_T: float = 10.0
    seed: int = 0
    internal_knots: np.ndarray = field(default_factory=lambda: np.array([0.5]))

    def __post_init__(self):
        self.theta_mu = np.asarray(self.theta_mu, dtype=float)
        self.Theta = np.atleast_2d(np.asarray(self.Theta, dtype=float))
        self.D = np.atleast_1d(np.asarray(self.D, dtype=float))
        self.internal_knots = np.atleast_1d(np.asarray(self.internal_knots, dtype=float))
        q = self.internal_knots.size + 4
        if self.theta_mu.shape != (q,) or self.Theta.shape[0] != q:
            raise TruthError(f"coefficient shapes do not match q={q}")
        if self.D.size != self.Theta.shape[1]:
            raise TruthError("D must have one variance per component")
        if np.abs(self.Theta.T @ self.Theta - np.eye(self.k)).max() > 1e-10:
            raise TruthError("Theta columns must be orthonormal")
        if np.any(self.D < 0) or self.sigma2 < 0:
            raise TruthError("variances must be non-negative")
        if self.N < 1 or self.N_T < 1 or not 0 < self.mu_T:
            raise TruthError("N, N_T and mu_T must be positive")
        if self.mu_T > self.N_T:
            raise TruthError("mu_T cannot exceed N_T")

    @property
    def q(self) -> int:
        return self.theta_mu.size

    @property
    def k(self) -> int:
        return self.Theta.shape[1]

    @property
    def missingness(self) -> float:
        return 1.0 - self.mu_T / self.N_T

    def basis(self) -> OrthonormalBasis:
        return build_basis(self.internal_knots)

    def candidate_times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.N_T) if self.N_T > 1 else np.array([0.0])

    def with_scenario(self, N=None, missing=None, seed=None) -> "SimulationTruth":
        mu_T = self.mu_T if missing is None else self.N_T * (1.0 - missing)
        return replace(self, N=self.N if N is None else N, mu_T=mu_T,
                       seed=self.seed if seed is None else seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("theta_mu", "Theta", "D", "internal_knots"):
            d[key] = np.asarray(d[key]).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationTruth":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in d.items() if k in fields})


def default_truth() -> SimulationTruth:
    text = resources.files("sfpca").joinpath("resources/default_truth.json").read_text()
    return SimulationTruth.from_dict(json.loads(text))


def load_truth(path) -> SimulationTruth:
    return SimulationTruth.from_dict(json.loads(Path(path).read_text()))


def save_truth(truth: SimulationTruth, path) -> None:
    Path(path).write_text(json.dumps(truth.to_dict(), indent=2))


def visit_rate(mu_T: float, N_T: int) -> float:
    """Poisson rate whose truncation to [1, N_T] has mean ``mu_T``."""
    if mu_T <= 1.0:
        return 1e-12
    ks = np.arange(1, N_T + 1)

    def mean_gap(lam):
        pmf = poisson.pmf(ks, lam)
        return pmf @ ks / pmf.sum() - mu_T

    hi = max(2.0 * mu_T, 1.0)
    while mean_gap(hi) < 0:
        hi *= 2
        if hi > 1e6:
            raise TruthError(f"cannot reach mean {mu_T} visits out of {N_T}")
    return brentq(mean_gap, 1e-9, hi, xtol=1e-12)


def draw_visit_counts(rng, N: int, mu_T: float, N_T: int) -> np.ndarray:
    """Visit counts from a Poisson truncated to [1, N_T] (out-of-range draws redrawn).

    The rate is calibrated so that E[n_i] = mu_T, keeping the expected
    missingness at 1 - mu_T/N_T. With mu_T == N_T every slot is observed.
    """
    if mu_T >= N_T:
        return np.full(N, N_T, dtype=int)
    lam = visit_rate(mu_T, N_T)
    n = rng.poisson(lam, size=N)
    bad = (n < 1) | (n > N_T)
    while bad.any():
        n[bad] = rng.poisson(lam, size=bad.sum())
        bad = (n < 1) | (n > N_T)
    return n


@dataclass
class SimulatedData:
    data: LongitudinalDataset
    alpha: np.ndarray  # (N, k) true scores
    truth: SimulationTruth

    def true_curves(self, grid) -> np.ndarray:
        """Noise-free trajectories of every subject on ``grid``: (N, len(grid))."""
        E = self.truth.basis().evaluate(grid)
        return (E @ self.truth.theta_mu)[None, :] + (E @ self.truth.Theta @ self.alpha.T).T


def generate(truth: SimulationTruth, rng=None) -> SimulatedData:
    """Draw one dataset: visit counts, visit slots, scores, noise, outcomes."""
    rng = np.random.default_rng(truth.seed) if rng is None else rng
    basis = truth.basis()
    slots = truth.candidate_times()
    n_i = draw_visit_counts(rng, truth.N, truth.mu_T, truth.N_T)
    alpha = rng.standard_normal((truth.N, truth.k)) * np.sqrt(truth.D)
    subjects = []
    width = max(3, len(str(truth.N)))
    for i in range(truth.N):
        t = np.sort(rng.choice(slots, size=n_i[i], replace=False))
        B = basis.evaluate(t)
        y = B @ truth.theta_mu + B @ truth.Theta @ alpha[i]
        y = y + rng.standard_normal(t.size) * math.sqrt(truth.sigma2)
        subjects.append(Subject(f"s{i + 1:0{width}d}", t, y))
    return SimulatedData(LongitudinalDataset(tuple(subjects)), alpha, truth)


def align_to_truth(Theta_hat: np.ndarray, Theta_true: np.ndarray) -> np.ndarray:
    """Reorder and sign-flip estimated columns to match the truth."""
    perm, signs = _match(Theta_true, Theta_hat)
    return Theta_hat[:, perm] * signs


@dataclass
class RecoveryScore:
    mse_mean: float
    mse_fpc: float
    mse_mean_curve: float
    mse_fpc_curve: float

    def as_dict(self) -> dict:
        return asdict(self)


def raw_scale_mean_coefs(theta_mu_std: np.ndarray, basis: OrthonormalBasis, mean: float, sd: float) -> np.ndarray:
    """Mean-curve coefficients on the raw outcome scale.

    The constant function has coefficients basis.integrals(), so
    sd * f(t) + mean maps to sd * theta + mean * integrals.
    """
    return sd * np.asarray(theta_mu_std) + mean * basis.integrals()


def score_recovery(rotated: RotatedDraws, truth: SimulationTruth, basis: OrthonormalBasis,
                   mean: float = 0.0, sd: float = 1.0, grid_size: int = 101) -> RecoveryScore:
    """Squared-error recovery of the mean and component coefficients and curves.

    ``mean``/``sd`` undo the outcome standardization used in fitting. The
    loadings are compared after matching estimated to true components by
    maximal |inner product| and fixing signs.
    """
    if rotated.k != truth.k:
        raise ScoringError(f"fit has k={rotated.k}, truth has k={truth.k}")
    if basis.q != truth.q:
        raise ScoringError(f"fit has q={basis.q}, truth has q={truth.q}")
    theta_hat = raw_scale_mean_coefs(rotated.theta_mu.mean(axis=0), basis, mean, sd)
    Theta_hat = align_to_truth(rotated.posterior_mean_loadings(), truth.Theta)
    grid = np.linspace(0, 1, grid_size)
    E_fit = basis.evaluate(grid)
    E_true = truth.basis().evaluate(grid)
    mean_curve_err = E_fit @ theta_hat - E_true @ truth.theta_mu
    fpc_curve_err = E_fit @ Theta_hat - E_true @ truth.Theta
    return RecoveryScore(
        mse_mean=float(np.mean((theta_hat - truth.theta_mu) ** 2)),
        mse_fpc=float(np.mean((Theta_hat - truth.Theta) ** 2)),
        mse_mean_curve=float(np.mean(mean_curve_err ** 2)),
        mse_fpc_curve=float(np.mean(fpc_curve_err ** 2)),
    )
