"""Posterior predictive checks, fitted curves and per-subject trajectories."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .basis import OrthonormalBasis
from .data import LongitudinalDataset, Standardization, TimeScale
from .model import ModelSpec
from .rotate import RotatedDraws

GRID_POINTS = 512
QUANTILES = (2.5, 50.0, 97.5)


class PredictError(ValueError):
    pass


# ---------------------------------------------------------------------------
# kernel density


def silverman_bandwidth(x) -> float:
    """0.9 * min(sd, IQR / 1.34) * n^(-1/5); falls back to sd or 1 when degenerate."""
    x = np.asarray(x, dtype=float)
    n = x.size
    sd = x.std(ddof=1) if n > 1 else 0.0
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if not spread > 0:
        spread = abs(x[0]) if n and x[0] != 0 else 1.0
    return 0.9 * spread * n ** (-0.2)


def kde(x, grid, bandwidth: float | None = None) -> np.ndarray:
    """Gaussian kernel density of ``x`` evaluated on ``grid``."""
    x = np.asarray(x, dtype=float)
    h = silverman_bandwidth(x) if bandwidth is None else bandwidth
    z = (np.asarray(grid, dtype=float)[:, None] - x[None, :]) / h
    return np.exp(-0.5 * z * z).sum(axis=1) / (x.size * h * math.sqrt(2 * math.pi))


def density_grid(samples, n_points: int = GRID_POINTS, pad: float = 3.0) -> np.ndarray:
    """Grid covering every sample set's range widened by ``pad`` of its own bandwidth."""
    lo, hi = np.inf, -np.inf
    for x in samples:
        h = silverman_bandwidth(x)
        lo = min(lo, np.min(x) - pad * h)
        hi = max(hi, np.max(x) + pad * h)
    return np.linspace(lo, hi, n_points)


# ---------------------------------------------------------------------------
# posterior predictive replication


@dataclass
class PpcBundle:
    """Observed and replicated pooled-outcome densities on one shared grid (standardized scale)."""

    grid: np.ndarray
    observed_density: np.ndarray
    replicate_densities: np.ndarray  # (R, grid)
    draw_index: np.ndarray

    @property
    def R(self) -> int:
        return self.replicate_densities.shape[0]

    def envelope_coverage(self) -> float:
        """Fraction of grid points where the observed density lies within the replicate min-max envelope."""
        lo = self.replicate_densities.min(axis=0)
        hi = self.replicate_densities.max(axis=0)
        return float(np.mean((self.observed_density >= lo) & (self.observed_density <= hi)))

    def discrepancy(self) -> float:
        """Mean over replicates of the largest absolute gap to the observed density."""
        return float(np.abs(self.replicate_densities - self.observed_density).max(axis=1).mean())


def stride_indices(S: int, R: int) -> np.ndarray:
    """R evenly spaced draw indices out of S."""
    if R > S:
        raise PredictError(f"asked for {R} replicates but only {S} draws are available")
    if R < 1:
        raise PredictError("need at least one replicate")
    return np.floor(np.arange(R) * (S / R)).astype(int)


def fitted_values(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    """Noise-free means at the observed design points, (S, n_total)."""
    d = spec.unpack_draws(np.atleast_2d(X))
    mu = d["theta_mu"] @ spec.B.T
    BT = np.einsum("nq,sqk->snk", spec.B, d["Theta"])
    return mu + np.einsum("snk,snk->sn", BT, d["alpha"][:, spec.subj, :])


def replicate_outcomes(spec: ModelSpec, X: np.ndarray, rng) -> np.ndarray:
    d = spec.unpack_draws(np.atleast_2d(X))
    mu = fitted_values(spec, X)
    return mu + rng.standard_normal(mu.shape) * d["sigma"][:, None]


def replicate(spec: ModelSpec, draws: np.ndarray, R: int = 100, seed: int = 0,
              n_points: int = GRID_POINTS) -> PpcBundle:
    """Replicated datasets at the observed design points and their densities.

    ``draws`` is the flat (S, dim) draw matrix. The grid spans the observed
    and replicated values, each widened by three of its Silverman bandwidths.
    """
    draws = np.atleast_2d(draws)
    idx = stride_indices(draws.shape[0], R)
    rng = np.random.default_rng(seed)
    yrep = replicate_outcomes(spec, draws[idx], rng)
    grid = density_grid([spec.y, *yrep], n_points)
    obs = kde(spec.y, grid)
    reps = np.stack([kde(r, grid) for r in yrep])
    return PpcBundle(grid, obs, reps, idx)


# ---------------------------------------------------------------------------
# curves


def _bands(values: np.ndarray) -> np.ndarray:
    """Pointwise (2.5, 50, 97.5) percentiles over axis 0."""
    return np.percentile(values, QUANTILES, axis=0)


@dataclass
class CurveSet:
    """Population mean and component curves on the outcome's original scale."""

    grid: np.ndarray  # [0, 1]
    time: np.ndarray  # original time units
    mean: np.ndarray  # (3, G): lower, median, upper
    mean_estimate: np.ndarray  # posterior mean curve
    components: np.ndarray  # (k, 3, G)
    component_estimate: np.ndarray  # (k, G) posterior-mean component curves
    score_sd: np.ndarray  # (k,) across-subject SD of posterior-mean scores
    plus: np.ndarray  # (k, G) mean + 1 SD of scores
    minus: np.ndarray  # (k, G) mean - 1 SD of scores

    @property
    def k(self) -> int:
        return self.components.shape[0]


def fitted_curves(rotated: RotatedDraws, basis: OrthonormalBasis, standardization: Standardization | None = None,
                  grid_size: int = 101, time_scale: TimeScale | None = None) -> CurveSet:
    """Posterior summaries of the mean curve and each identified component.

    Component curves carry the outcome's scale factor but no shift. The
    overlays are mu(t) +/- sd_j f_j(t) with sd_j the SD across subjects of
    the posterior-mean rotated scores.
    """
    st = standardization or Standardization()
    grid = np.linspace(0.0, 1.0, grid_size)
    E = basis.evaluate(grid)
    mean_draws = st.inverse(rotated.theta_mu @ E.T)  # (S, G)
    comp_draws = st.inverse_scale(np.einsum("gq,sqk->skg", E, rotated.Theta_star))
    comps = np.stack([_bands(comp_draws[:, j]) for j in range(rotated.k)])
    mu_hat = mean_draws.mean(axis=0)
    f_hat = comp_draws.mean(axis=0)
    scores = rotated.posterior_mean_scores()
    sd = scores.std(axis=0, ddof=1) if scores.shape[0] > 1 else np.zeros(rotated.k)
    time = time_scale.inverse(grid) if time_scale is not None else grid.copy()
    return CurveSet(grid=grid, time=time, mean=_bands(mean_draws), mean_estimate=mu_hat,
                    components=comps, component_estimate=f_hat, score_sd=sd,
                    plus=mu_hat + sd[:, None] * f_hat, minus=mu_hat - sd[:, None] * f_hat)


@dataclass
class Trajectory:
    subject_id: str
    grid: np.ndarray
    time: np.ndarray
    bands: np.ndarray  # (3, G): lower, median, upper on the original scale
    obs_times: np.ndarray
    obs_values: np.ndarray
    with_noise: bool = False

    @property
    def lower(self):
        return self.bands[0]

    @property
    def median(self):
        return self.bands[1]

    @property
    def upper(self):
        return self.bands[2]


def subject_curve_draws(spec: ModelSpec, draws: np.ndarray, index: int, grid) -> np.ndarray:
    """b(t)'(theta_mu + Theta alpha_i) per draw on ``grid`` (standardized scale), (S, G)."""
    d = spec.unpack_draws(np.atleast_2d(draws))
    beta = d["theta_mu"] + np.einsum("sqk,sk->sq", d["Theta"], d["alpha"][:, index, :])
    return beta @ spec.basis.evaluate(grid).T


def subject_trajectory(spec: ModelSpec, draws: np.ndarray, data: LongitudinalDataset, subject_id: str,
                       grid=None, standardization: Standardization | None = None,
                       time_scale: TimeScale | None = None, with_noise: bool = False,
                       seed: int = 0) -> Trajectory:
    """Predicted curve of one subject with a pointwise 95% band.

    ``data`` is the (rescaled, standardized) dataset the model was fitted to.
    With ``with_noise`` each draw also adds N(0, sigma^2) noise, giving a
    predictive band for new measurements. Curves and observations are
    returned on the original time and outcome scales.
    """
    subj = data.subject(subject_id)
    i = data.subject_ids.index(subject_id)
    st = standardization or Standardization()
    grid = np.linspace(0, 1, 101) if grid is None else np.asarray(grid, dtype=float)
    curves = subject_curve_draws(spec, draws, i, grid)
    if with_noise:
        sigma = np.exp(np.atleast_2d(draws)[:, -1])
        curves = curves + np.random.default_rng(seed).standard_normal(curves.shape) * sigma[:, None]
    bands = st.inverse(_bands(curves))
    to_time = time_scale.inverse if time_scale is not None else np.asarray
    return Trajectory(subject_id, grid, to_time(grid), bands, to_time(subj.times),
                      st.inverse(subj.values), with_noise)
