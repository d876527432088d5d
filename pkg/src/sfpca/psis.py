"""Pareto-smoothed importance sampling leave-one-out cross-validation.

All weight arithmetic is done on the log scale. For held-out unit i with
log-likelihood draws ll[s, i] the raw importance ratios are
r_s = 1 / p(y_i | theta_s); the largest M = ceil(0.2 S) ratios are replaced
by generalized Pareto quantiles fitted with the Zhang-Stephens empirical-Bayes
estimator, every weight is capped at S^(3/4) times the smoothed mean, and

    elppd_i = log(sum_s w_s p(y_i | theta_s) / sum_s w_s).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

KHAT_WARN = 0.5
KHAT_BAD = 0.7
KHAT_FLOOR = -1.0
TAIL_FRACTION = 0.2
MIN_TAIL = 5


class InsufficientTailError(ValueError):
    pass


class DegenerateTailError(ValueError):
    pass


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class GpdFit:
    khat: float
    sigma: float
    threshold: float
    M: int


def importance_ratios(loglik) -> np.ndarray:
    """Log importance ratios log r_i^s = -loglik[s, i]."""
    return -np.asarray(loglik, dtype=float)


def tail_length(S: int) -> int:
    return max(int(math.ceil(TAIL_FRACTION * S)), MIN_TAIL)


def fit_gpd_tail(exceedances, threshold: float = 0.0) -> GpdFit:
    """Zhang & Stephens (2009) empirical-Bayes fit of a generalized Pareto tail.

    ``exceedances`` are tail values minus the threshold (all >= 0). Returns
    the shape k (positive = heavy tail) and scale sigma. No extra shrinkage
    of k is applied.
    """
    x = np.sort(np.asarray(exceedances, dtype=float))
    n = x.size
    if n < MIN_TAIL:
        raise InsufficientTailError(f"need at least {MIN_TAIL} tail draws, got {n}")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("exceedances must be finite and non-negative")
    if x[-1] <= 0:
        raise DegenerateTailError("all exceedances are zero")
    m = 20 + int(math.floor(math.sqrt(n)))
    x_quart = x[max(int(math.floor(n / 4 + 0.5)) - 1, 0)]
    if x_quart <= 0:
        x_quart = x[x > 0][0]
    j = np.arange(1, m + 1)
    theta = 1.0 / x[-1] + (1.0 - np.sqrt(m / (j - 0.5))) / (3.0 * x_quart)
    k = np.log1p(-theta[:, None] * x).mean(axis=1)
    prof = n * (np.log(-theta / k) - k - 1.0)
    w = np.exp(prof - logsumexp(prof))
    keep = w >= 10 * np.finfo(float).eps
    w, theta = w[keep], theta[keep]
    theta_hat = float(np.sum(theta * w) / w.sum())
    khat = float(np.log1p(-theta_hat * x).mean())
    sigma = -khat / theta_hat
    return GpdFit(khat=khat, sigma=float(sigma), threshold=float(threshold), M=n)


def gpd_quantile(p, khat: float, sigma: float) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if abs(khat) < 1e-12:
        return -sigma * np.log1p(-p)
    return sigma * np.expm1(-khat * np.log1p(-p)) / khat


def truncation_cap(S: int, mean_weight: float) -> float:
    return S ** 0.75 * mean_weight


@dataclass
class SmoothedWeights:
    log_weights: np.ndarray  # unnormalized, relative to the max raw ratio
    khat: float
    fit: GpdFit | None
    M: int


def smooth_weights(log_ratios) -> SmoothedWeights:
    """Pareto-smooth one unit's importance ratios and truncate them."""
    lr = np.asarray(log_ratios, dtype=float)
    S = lr.size
    M = tail_length(S)
    if M >= S:
        raise InsufficientTailError(f"S={S} draws too few for a tail of {M}")
    lw = lr - lr.max()
    order = np.argsort(lw, kind="stable")
    tail_idx = order[S - M:]
    u_log = lw[order[S - M - 1]]
    u = math.exp(u_log)
    exceed = np.exp(lw[tail_idx]) - u
    fit = None
    try:
        fit = fit_gpd_tail(exceed, threshold=u)
        khat = fit.khat
    except DegenerateTailError:
        khat = KHAT_FLOOR
    smoothed = lw.copy()
    if fit is not None and np.isfinite(khat):
        z = np.arange(1, M + 1)
        q = gpd_quantile((z - 0.5) / M, fit.khat, fit.sigma)
        smoothed[tail_idx] = np.log(u + q)
    mean_w = float(np.exp(logsumexp(smoothed)) / S)
    cap = math.log(truncation_cap(S, mean_w))
    smoothed = np.minimum(smoothed, cap)
    return SmoothedWeights(smoothed, float(khat), fit, M)


def psis(log_ratios) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise smoothing of an (S, N) log-ratio matrix; returns (log_weights, khat)."""
    lr = np.asarray(log_ratios, dtype=float)
    if lr.ndim == 1:
        lr = lr[:, None]
    out = np.empty_like(lr)
    khat = np.empty(lr.shape[1])
    for i in range(lr.shape[1]):
        sw = smooth_weights(lr[:, i])
        out[:, i] = sw.log_weights
        khat[i] = sw.khat
    return out, khat


@dataclass
class LooReport:
    elppd: float
    se: float
    pointwise: np.ndarray
    khat: np.ndarray
    S: int
    M: int
    lppd: float
    unit_ids: list = field(default_factory=list)
    unit: str = "subject"

    @property
    def N(self) -> int:
        return self.pointwise.size

    @property
    def p_loo(self) -> float:
        return self.lppd - self.elppd

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero(self.khat > KHAT_BAD)

    @property
    def n_bad(self) -> int:
        return int(np.sum(self.khat > KHAT_BAD))

    @property
    def n_warn(self) -> int:
        return int(np.sum(self.khat > KHAT_WARN))

    def to_dict(self) -> dict:
        ids = self.unit_ids or list(range(self.N))
        return {
            "elppd": self.elppd, "se": self.se, "lppd": self.lppd, "p_loo": self.p_loo,
            "S": self.S, "M": self.M, "unit": self.unit,
            "n_bad": self.n_bad, "n_warn": self.n_warn, "khat_threshold": KHAT_BAD,
            "flagged": [ids[i] for i in self.flagged],
            "pointwise": [{"id": ids[i], "elppd": float(self.pointwise[i]), "khat": float(self.khat[i])}
                          for i in range(self.N)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LooReport":
        pw = d["pointwise"]
        return cls(elppd=d["elppd"], se=d["se"], pointwise=np.array([p["elppd"] for p in pw]),
                   khat=np.array([p["khat"] for p in pw]), S=d["S"], M=d["M"], lppd=d["lppd"],
                   unit_ids=[p["id"] for p in pw], unit=d.get("unit", "subject"))


def compute_loo(loglik, unit_ids=None, unit: str = "subject") -> LooReport:
    """PSIS-LOO from an (S, N) matrix of per-unit log-likelihood draws."""
    ll = np.asarray(loglik, dtype=float)
    if ll.ndim == 1:
        ll = ll[:, None]
    if not np.all(np.isfinite(ll)):
        raise ValueError("log-likelihood matrix contains non-finite values")
    S, N = ll.shape
    lw, khat = psis(importance_ratios(ll))
    pointwise = logsumexp(lw + ll, axis=0) - logsumexp(lw, axis=0)
    lppd = float(np.sum(logsumexp(ll, axis=0) - math.log(S)))
    se = float(math.sqrt(N * pointwise.var(ddof=1))) if N > 1 else 0.0
    return LooReport(elppd=float(pointwise.sum()), se=se, pointwise=pointwise, khat=khat,
                     S=S, M=tail_length(S), lppd=lppd, unit_ids=list(unit_ids or []), unit=unit)


def elppd_diff(a: LooReport, b: LooReport) -> tuple[float, float]:
    """(elppd_b - elppd_a, SE of the difference) from paired pointwise values."""
    if a.N != b.N:
        raise ComparisonError(f"reports cover different numbers of units ({a.N} vs {b.N})")
    d = b.pointwise - a.pointwise
    se = float(math.sqrt(a.N * d.var(ddof=1))) if a.N > 1 else 0.0
    return float(d.sum()), se


def compare_models(reports, names=None, complexity=None) -> dict:
    """Rank models by elppd and recommend one.

    Each non-best model gets delta = elppd - elppd_best and
    SE(delta) = sqrt(N * var(pointwise differences)). A model with
    |delta| <= SE(delta) is "tied" with the best. The recommendation is the
    tied model with the smallest ``complexity`` key (default: list order),
    e.g. ``(n_components, n_knots)``.
    """
    reports = list(reports)
    if not reports:
        raise ComparisonError("no models to compare")
    names = list(names) if names is not None else [f"model_{i}" for i in range(len(reports))]
    complexity = list(complexity) if complexity is not None else list(range(len(reports)))
    Ns = {r.N for r in reports}
    if len(Ns) != 1:
        raise ComparisonError(f"reports cover different numbers of units: {sorted(Ns)}")
    order = sorted(range(len(reports)), key=lambda i: (-reports[i].elppd, complexity[i]))
    best = reports[order[0]]
    rows = []
    for i in order:
        delta, se = elppd_diff(best, reports[i])
        tied = abs(delta) <= se or delta == 0.0
        rows.append({"name": names[i], "index": i, "elppd": reports[i].elppd, "se": reports[i].se,
                     "delta": delta, "se_delta": se, "tied": bool(tied),
                     "n_bad_khat": reports[i].n_bad, "complexity": complexity[i]})
    tied_rows = [r for r in rows if r["tied"]]
    rec = min(tied_rows, key=lambda r: (r["complexity"], -r["elppd"]))
    return {"table": rows, "best": rows[0]["name"], "recommended": rec["name"],
            "recommended_index": rec["index"]}
