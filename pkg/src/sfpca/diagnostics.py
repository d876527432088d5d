"""Convergence diagnostics: rank-normalized split R-hat, bulk ESS, MCSE."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata

RHAT_WARN = 1.01


def _split(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def _rank_normalize(x: np.ndarray) -> np.ndarray:
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 3 / 8) / (x.size + 1 / 4))


def _is_degenerate(x: np.ndarray) -> bool:
    return (not np.all(np.isfinite(x))) or np.ptp(x) == 0


def split_rhat(x) -> float:
    """Rank-normalized split R-hat for draws shaped (chains, draws).

    Returns nan for fewer than two chains' worth of split halves or for a
    constant parameter.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 or x.shape[0] < 2 or x.shape[1] < 4 or _is_degenerate(x):
        return float("nan")
    z = _rank_normalize(_split(x))
    m, n = z.shape
    means = z.mean(axis=1)
    W = z.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    var_hat = (n - 1) / n * W + B / n
    return float(np.sqrt(var_hat / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.size
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x - x.mean(), n=m)
    ac = np.fft.irfft(f * np.conjugate(f), n=m)[:n]
    return ac / n


def ess(x) -> float:
    """Effective sample size via Geyer's initial monotone sequence over chains."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    m, n = x.shape
    if n < 4 or _is_degenerate(x):
        return float("nan")
    acov = np.stack([_autocov(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    rho = np.empty(n)
    rho[0] = 1.0
    rho[1:] = 1.0 - (mean_var - acov[:, 1:].mean(axis=0)) / var_plus
    # pair sums, truncated at the first non-positive pair, then made monotone
    pair = [rho[0] + rho[1]]
    t = 2
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s <= 0:
            break
        pair.append(min(s, pair[-1]))
        t += 2
    tau = -1.0 + 2.0 * np.sum(pair)
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def ess_bulk(x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if _is_degenerate(x) or x.shape[1] < 8:
        return float("nan")
    return ess(_rank_normalize(_split(x)))


def mcse_mean(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(x.std(ddof=1) / np.sqrt(ess(_split(x) if x.ndim == 2 and x.shape[1] >= 8 else x)))


def mcse_var(x) -> float:
    """MCSE of the sample variance, from the ESS of squared deviations."""
    x = np.asarray(x, dtype=float)
    d2 = (x - x.mean()) ** 2
    return float(d2.std(ddof=1) / np.sqrt(ess(_split(d2) if d2.ndim == 2 and d2.shape[1] >= 8 else d2)))


def summarize(draws: np.ndarray, names: list[str] | None = None, rhat_warn: float = RHAT_WARN) -> dict:
    """Per-parameter report for draws shaped (chains, draws, params)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 2:
        draws = draws[:, :, None]
    C, n, P = draws.shape
    names = names or [f"x[{j}]" for j in range(P)]
    params = []
    flagged = []
    degenerate = []
    for j in range(P):
        x = draws[:, :, j]
        if np.ptp(x) == 0:
            entry = {"name": names[j], "rhat": None, "ess_bulk": None, "status": "degenerate"}
            degenerate.append(names[j])
        else:
            rh = split_rhat(x) if C >= 2 and n >= 50 else float("nan")
            eb = ess_bulk(x)
            status = "unavailable" if np.isnan(rh) else ("warn" if rh > rhat_warn else "ok")
            entry = {"name": names[j], "mean": float(x.mean()), "sd": float(x.std(ddof=1)),
                     "rhat": None if np.isnan(rh) else rh,
                     "ess_bulk": None if np.isnan(eb) else eb, "status": status}
            if status == "warn":
                flagged.append(names[j])
        params.append(entry)
    rhats = [p["rhat"] for p in params if p.get("rhat") is not None]
    esses = [p["ess_bulk"] for p in params if p.get("ess_bulk") is not None]
    return {
        "chains": C, "draws_per_chain": n,
        "rhat_available": C >= 2 and n >= 50,
        "max_rhat": max(rhats) if rhats else None,
        "min_ess_bulk": min(esses) if esses else None,
        "rhat_threshold": rhat_warn,
        "flagged": flagged, "degenerate": degenerate, "params": params,
    }
