"""End-to-end SFPCA fitting: prepare data, sample, identify, cross-validate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .basis import OrthonormalBasis, build_basis, place_knots
from .data import LongitudinalDataset, Standardization, TimeScale, rescale_time, standardize
from .model import ModelSpec
from .nuts import SamplerConfig, SamplerResult, check_gradient, sample
from .psis import LooReport, compute_loo
from .rotate import RotatedDraws, align_draws, rotate_all, variance_explained

logger = logging.getLogger(__name__)

DIVERGENCE_WARN = 0.10


class GradientCheckError(RuntimeError):
    pass


@dataclass
class PreparedData:
    """Data rescaled to [0, 1] in time and standardized in value."""

    raw: LongitudinalDataset
    data: LongitudinalDataset
    standardization: Standardization
    time_scale: TimeScale


def prepare(data: LongitudinalDataset, time_range=None, do_standardize: bool = True) -> PreparedData:
    rescaled = rescale_time(data, time_range)
    if do_standardize:
        std_data, st = standardize(rescaled)
    else:
        std_data, st = rescaled, Standardization()
    return PreparedData(raw=data, data=std_data, standardization=st, time_scale=rescaled.time_scale)


def make_basis(prepared: PreparedData, n_knots: int | None = None, knots=None,
               knot_method: str = "quantile") -> OrthonormalBasis:
    if knots is None:
        if n_knots is None:
            raise ValueError("give either n_knots or knots")
        knots = place_knots(prepared.data.all_times(), n_knots, method=knot_method)
    return build_basis(knots)


@dataclass
class FitResult:
    spec: ModelSpec
    prepared: PreparedData
    sampler: SamplerResult
    rotated: RotatedDraws
    loo: LooReport
    convergence: dict
    warnings: list = field(default_factory=list)
    loo_warnings: list = field(default_factory=list)

    @property
    def basis(self) -> OrthonormalBasis:
        return self.spec.basis

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def n_knots(self) -> int:
        return self.basis.q - 4

    def draws(self) -> dict:
        return self.spec.unpack_draws(self.sampler.flat())

    def variance_explained(self) -> dict:
        return variance_explained(self.rotated)

    @property
    def status(self) -> str:
        """"warning" when sampling diagnostics failed; k-hat issues are reported separately."""
        return "warning" if self.warnings else "ok"


def identify(spec: ModelSpec, flat_draws: np.ndarray) -> RotatedDraws:
    d = spec.unpack_draws(flat_draws)
    return align_draws(rotate_all(d["theta_mu"], d["Theta"], d["alpha"], d["sigma"]))


def convergence_report(spec: ModelSpec, res: SamplerResult, rotated: RotatedDraws) -> dict:
    """Diagnostics on identified quantities.

    Raw loadings and scores are only identified up to rotation, so R-hat is
    reported for theta_mu, log_sigma, lp__ and the aligned rotated loadings.
    Draws whose rotation failed are excluded from the last group.
    """
    C, n, _ = res.draws.shape
    q, k = spec.q, spec.k
    cols = [res.draws[:, :, :q], res.draws[:, :, -1:], res.lp[:, :, None]]
    names = [f"theta_mu[{j}]" for j in range(q)] + ["log_sigma", "lp__"]
    if rotated.excluded.size == 0:
        cols.append(rotated.Theta_star.reshape(C, n, q * k))
        names += [f"Theta_star[{j},{c}]" for j in range(q) for c in range(k)]
    rep = diagnostics.summarize(np.concatenate(cols, axis=2), names)
    rep["divergences"] = int(res.divergent.sum())
    rep["divergence_rate"] = res.divergence_rate()
    rep["treedepth_saturated"] = int((res.treedepth >= res.config.max_treedepth).sum())
    rep["rank_deficient_draws"] = int(rotated.excluded.size)
    rep["chains_detail"] = res.chain_summary()
    return rep


def fit_sfpca(data: LongitudinalDataset | PreparedData, k: int, n_knots: int | None = None,
              config: SamplerConfig | None = None, knots=None, knot_method: str = "quantile",
              time_range=None, loo_unit: str = "subject", basis: OrthonormalBasis | None = None,
              gradient_check: bool = True, loo_likelihood: str = "marginal",
              compiled: bool = True) -> FitResult:
    """Fit one (k, basis) SFPCA model by NUTS and post-process it.

    Parameters
    ----------
    loo_likelihood : {"marginal", "conditional"}
        How a held-out subject is scored. "marginal" integrates the subject's
        scores out analytically; "conditional" plugs in each draw's scores.
        Both estimate the same leave-one-subject-out predictive density, but
        the conditional weights are far more variable (large k-hat) once a
        subject has more than a few observations. Ignored for observation
        units, which are always conditional.
    compiled : bool
        Run trajectories through the numba builder (same algorithm).
    """
    config = config or SamplerConfig()
    prepared = data if isinstance(data, PreparedData) else prepare(data, time_range)
    if basis is None:
        basis = make_basis(prepared, n_knots=n_knots, knots=knots, knot_method=knot_method)
    spec = ModelSpec.from_data(prepared.data, basis, k)

    if gradient_check:
        rng = np.random.default_rng(config.seed)
        x0 = rng.uniform(-1, 1, spec.dim)
        coords = rng.choice(spec.dim, size=min(spec.dim, 25), replace=False)
        ok, worst = check_gradient(spec.logp_and_grad, x0, coords=coords, rtol=1e-4, atol=1e-6)
        if not ok:
            raise GradientCheckError(f"model gradient failed finite-difference check (err {worst:.3g})")

    if loo_likelihood not in ("marginal", "conditional"):
        raise ValueError(f"unknown loo_likelihood {loo_likelihood!r}")
    res = sample(spec.logp_and_grad, spec.dim, config, jit=spec.jit_target() if compiled else None)
    rotated = identify(spec, res.flat())
    if loo_unit == "subject" and loo_likelihood == "marginal":
        loglik = spec.marginal_loglik_draws(res.flat())
    else:
        loglik = spec.pointwise_loglik_draws(res.flat(), unit=loo_unit)
    ids = prepared.data.subject_ids if loo_unit == "subject" else list(range(spec.y.size))
    loo = compute_loo(loglik, unit_ids=ids, unit=loo_unit)
    conv = convergence_report(spec, res, rotated)

    warns = list(res.warnings)
    if conv["flagged"]:
        warns.append(f"R-hat > {conv['rhat_threshold']} for {len(conv['flagged'])} quantities")
    loo_warns = [f"{loo.n_bad} units with Pareto k-hat > 0.7"] if loo.n_bad else []
    for w in warns + loo_warns:
        logger.warning(w)
    return FitResult(spec, prepared, res, rotated, loo, conv, warns, loo_warns)
