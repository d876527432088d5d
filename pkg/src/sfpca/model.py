"""Log posterior, gradient and per-unit log-likelihood of the Bayesian SFPCA model.

Data model (standardized outcomes, orthonormal spline basis b(t) of size q)::

    y_i = B_i theta_mu + B_i Theta alpha_i + eps_i,   eps_i ~ N(0, sigma^2 I)

Priors: theta_mu ~ N(0, I_q), each column of Theta ~ N(0, I_q),
alpha_i ~ N(0, I_k), sigma ~ half-Cauchy(0, 1). Sampling is on the
unconstrained vector ``[theta_mu, vec(Theta), vec(alpha), log(sigma)]``
(row-major Theta and alpha), with the log-Jacobian of sigma = exp(log_sigma)
included in the density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .basis import OrthonormalBasis
from .data import LongitudinalDataset

LOG_2PI = float(np.log(2 * np.pi))
LOG_HALF_CAUCHY_NORM = float(np.log(2 / np.pi))


class ModelSpecError(ValueError):
    pass


class ModelEvaluationError(ValueError):
    pass


@numba.njit(cache=True)
def _logp_grad_kernel(x, G, c, yy, n, q, k):
    """Log posterior and gradient from per-subject sufficient statistics.

    With beta_i = theta_mu + Theta alpha_i, the subject residual sum of squares
    is yy_i - 2 beta_i.c_i + beta_i' G_i beta_i where G_i = B_i'B_i and
    c_i = B_i'y_i; ``yy`` is the pooled sum of y^2.
    """
    N = c.shape[0]
    a = q + q * k
    ls = x[x.size - 1]
    inv_s2 = np.exp(-2.0 * ls)
    s2 = np.exp(2.0 * ls)
    g = np.empty_like(x)
    sq = 0.0
    for j in range(x.size - 1):
        sq += x[j] * x[j]
        g[j] = -x[j]
    rss = yy
    beta = np.empty(q)
    u = np.empty(q)
    for i in range(N):
        for j in range(q):
            b = x[j]
            for cc in range(k):
                b += x[q + j * k + cc] * x[a + i * k + cc]
            beta[j] = b
        for j in range(q):
            gb = 0.0
            for m in range(q):
                gb += G[i, j, m] * beta[m]
            rss += beta[j] * (gb - 2.0 * c[i, j])
            u[j] = (c[i, j] - gb) * inv_s2
        for j in range(q):
            g[j] += u[j]
            for cc in range(k):
                g[q + j * k + cc] += u[j] * x[a + i * k + cc]
                g[a + i * k + cc] += u[j] * x[q + j * k + cc]
    log2pi = np.log(2.0 * np.pi)
    lp = (-0.5 * n * log2pi - n * ls - 0.5 * rss * inv_s2
          - 0.5 * sq - 0.5 * log2pi * (x.size - 1)
          + np.log(2.0 / np.pi) - np.log1p(s2) + ls)
    g[x.size - 1] = -n + rss * inv_s2 - 2.0 * s2 / (1.0 + s2) + 1.0
    return lp, g


@numba.njit(cache=True)
def sfpca_kernel(x, data):
    """Kernel in the ``kernel(x, data)`` form used by the compiled sampler."""
    G, c, yy, n, q, k = data
    return _logp_grad_kernel(x, G, c, yy, n, q, k)


@dataclass
class Params:
    theta_mu: np.ndarray  # (q,)
    Theta: np.ndarray  # (q, k)
    alpha: np.ndarray  # (N, k)
    log_sigma: float

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A (k, basis) SFPCA model bound to one dataset.

    Holds the pooled design: ``B`` stacks every subject's B_i (rows in
    subject order), ``y`` the matching outcomes, ``subj`` the subject index of
    each row and ``starts`` the first row of each subject.
    """

    k: int
    basis: OrthonormalBasis
    B: np.ndarray
    y: np.ndarray
    subj: np.ndarray
    starts: np.ndarray
    n_obs: np.ndarray
    gram: np.ndarray  # (N, q, q) per-subject B_i'B_i
    cross: np.ndarray  # (N, q) per-subject B_i'y_i
    sumsq: np.ndarray  # (N,) per-subject y_i'y_i

    @classmethod
    def from_data(cls, data: LongitudinalDataset, basis: OrthonormalBasis, k: int) -> "ModelSpec":
        if not 1 <= k < basis.q:
            raise ModelSpecError(f"need 1 <= k < q; got k={k}, q={basis.q}")
        B = basis.evaluate(data.all_times())
        n_obs = data.n_obs
        starts = np.concatenate([[0], np.cumsum(n_obs)[:-1]]).astype(np.int64)
        y = data.all_values()
        gram = np.stack([B[s:s + m].T @ B[s:s + m] for s, m in zip(starts, n_obs)])
        cross = np.stack([B[s:s + m].T @ y[s:s + m] for s, m in zip(starts, n_obs)])
        sumsq = np.add.reduceat(y * y, starts)
        return cls(k=k, basis=basis, B=np.ascontiguousarray(B), y=y, subj=data.subject_index(),
                   starts=starts, n_obs=n_obs.astype(np.int64), gram=gram, cross=cross, sumsq=sumsq)

    @property
    def q(self) -> int:
        return self.basis.q

    @property
    def N(self) -> int:
        return len(self.n_obs)

    @property
    def dim(self) -> int:
        return self.q + self.q * self.k + self.N * self.k + 1

    def subject_design(self, i: int) -> np.ndarray:
        s = self.starts[i]
        return self.B[s:s + self.n_obs[i]]

    def param_names(self) -> list[str]:
        q, k, N = self.q, self.k, self.N
        names = [f"theta_mu[{j}]" for j in range(q)]
        names += [f"Theta[{j},{c}]" for j in range(q) for c in range(k)]
        names += [f"alpha[{i},{c}]" for i in range(N) for c in range(k)]
        names.append("log_sigma")
        return names

    # packing -------------------------------------------------------------
    def pack(self, p: Params) -> np.ndarray:
        return np.concatenate([np.ravel(p.theta_mu), np.ravel(p.Theta), np.ravel(p.alpha),
                               [p.log_sigma]]).astype(float)

    def unpack(self, x: np.ndarray) -> Params:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ModelSpecError(f"parameter vector has shape {x.shape}, expected ({self.dim},)")
        q, k, N = self.q, self.k, self.N
        a = q + q * k
        return Params(theta_mu=x[:q], Theta=x[q:a].reshape(q, k),
                      alpha=x[a:a + N * k].reshape(N, k), log_sigma=float(x[-1]))

    def unpack_draws(self, X: np.ndarray) -> dict[str, np.ndarray]:
        """Split an (S, dim) draw matrix into per-parameter arrays."""
        X = np.asarray(X, dtype=float)
        q, k, N = self.q, self.k, self.N
        a = q + q * k
        S = X.shape[0]
        return {"theta_mu": X[:, :q], "Theta": X[:, q:a].reshape(S, q, k),
                "alpha": X[:, a:a + N * k].reshape(S, N, k), "sigma": np.exp(X[:, -1])}

    # density -------------------------------------------------------------
    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ModelSpecError(f"parameter vector has shape {x.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(x)):
            raise ModelEvaluationError("non-finite parameter value")
        return x

    def _residuals(self, p: Params):
        BT = self.B @ p.Theta
        fitted = self.B @ p.theta_mu + np.einsum("nk,nk->n", BT, p.alpha[self.subj])
        return self.y - fitted, BT

    def log_prior(self, x) -> float:
        p = self.unpack(self._check(x))
        sigma = p.sigma
        lp = -0.5 * (p.theta_mu @ p.theta_mu + np.sum(p.Theta ** 2) + np.sum(p.alpha ** 2))
        lp -= 0.5 * LOG_2PI * (self.q + self.q * self.k + self.N * self.k)
        lp += LOG_HALF_CAUCHY_NORM - np.log1p(sigma * sigma)
        return float(lp + p.log_sigma)  # + log-Jacobian

    def log_likelihood(self, x) -> float:
        p = self.unpack(self._check(x))
        r, _ = self._residuals(p)
        n = self.y.size
        return float(-0.5 * n * LOG_2PI - n * p.log_sigma - 0.5 * (r @ r) * np.exp(-2 * p.log_sigma))

    def log_posterior(self, x) -> float:
        return self.log_likelihood(x) + self.log_prior(x)

    def logp_and_grad(self, x) -> tuple[float, np.ndarray]:
        """Log posterior and its exact gradient w.r.t. the packed vector."""
        x = self._check(x)
        lp, g = _logp_grad_kernel(x, self.gram, self.cross, float(self.y @ self.y),
                                  float(self.y.size), self.q, self.k)
        return float(lp), g

    def jit_target(self):
        """``(kernel, data)`` pair for :func:`sfpca.nuts.sample`'s compiled path."""
        return sfpca_kernel, (self.gram, self.cross, float(self.y @ self.y), float(self.y.size),
                              self.q, self.k)

    def logp_and_grad_dense(self, x) -> tuple[float, np.ndarray]:
        """Same as :meth:`logp_and_grad`, computed from observation-level residuals."""
        x = self._check(x)
        p = self.unpack(x)
        q, k, N = self.q, self.k, self.N
        n = self.y.size
        r, BT = self._residuals(p)
        inv_s2 = np.exp(-2 * p.log_sigma)
        rss = r @ r
        sigma2 = np.exp(2 * p.log_sigma)

        lp = -0.5 * n * LOG_2PI - n * p.log_sigma - 0.5 * rss * inv_s2
        lp += -0.5 * (x[:-1] @ x[:-1]) - 0.5 * LOG_2PI * (x.size - 1)
        lp += LOG_HALF_CAUCHY_NORM - np.log1p(sigma2) + p.log_sigma

        w = r * inv_s2
        g = np.empty_like(x)
        g[:q] = self.B.T @ w - p.theta_mu
        a = q + q * k
        g[q:a] = (self.B.T @ (w[:, None] * p.alpha[self.subj]) - p.Theta).ravel()
        g[a:a + N * k] = (np.add.reduceat(w[:, None] * BT, self.starts, axis=0) - p.alpha).ravel()
        g[-1] = -n + rss * inv_s2 - 2 * sigma2 / (1 + sigma2) + 1.0
        return float(lp), g

    def grad_log_posterior(self, x) -> np.ndarray:
        return self.logp_and_grad(x)[1]

    def pointwise_loglik(self, x, unit: str = "subject") -> np.ndarray:
        """Log-likelihood per subject (length N), or per observation with ``unit="observation"``."""
        p = self.unpack(self._check(x))
        r, _ = self._residuals(p)
        ll = -0.5 * LOG_2PI - p.log_sigma - 0.5 * r * r * np.exp(-2 * p.log_sigma)
        if unit == "observation":
            return ll
        if unit != "subject":
            raise ValueError(f"unknown LOO unit {unit!r}")
        return np.add.reduceat(ll, self.starts)

    def pointwise_loglik_draws(self, X, unit: str = "subject") -> np.ndarray:
        """(S, N) matrix (or (S, n_total) for observation units) over a draw matrix."""
        d = self.unpack_draws(X)
        mu = d["theta_mu"] @ self.B.T  # (S, n)
        BT = np.einsum("nq,sqk->snk", self.B, d["Theta"])
        mu += np.einsum("snk,snk->sn", BT, d["alpha"][:, self.subj, :])
        r = self.y[None, :] - mu
        sig = d["sigma"][:, None]
        ll = -0.5 * LOG_2PI - np.log(sig) - 0.5 * (r / sig) ** 2
        if unit == "observation":
            return ll
        if unit != "subject":
            raise ValueError(f"unknown LOO unit {unit!r}")
        return np.add.reduceat(ll, self.starts, axis=1)

    def marginal_loglik_draws(self, X, chunk: int = 500) -> np.ndarray:
        """(S, N) subject log-likelihoods with the scores integrated out.

        For each draw, y_i ~ N(B_i theta_mu, sigma^2 I + B_i Theta Theta' B_i').
        Computed with the Woodbury identity on the sufficient statistics, so
        only k x k systems are solved.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty((X.shape[0], self.N))
        n = self.n_obs.astype(float)
        Ik = np.eye(self.k)
        for lo in range(0, X.shape[0], chunk):
            d = self.unpack_draws(X[lo:lo + chunk])
            tm, T, s2 = d["theta_mu"], d["Theta"], d["sigma"][:, None] ** 2
            Gt = np.einsum("nqr,sr->snq", self.gram, tm)  # G_i theta_mu
            rr = self.sumsq[None] - 2 * np.einsum("nq,sq->sn", self.cross, tm) + np.einsum("snq,sq->sn", Gt, tm)
            w = np.einsum("sqk,snq->snk", T, self.cross[None] - Gt)
            GT = np.einsum("nqr,srk->snqk", self.gram, T)
            M = np.einsum("sqj,snqk->snjk", T, GT) + s2[:, :, None, None] * Ik
            L = np.linalg.cholesky(M)
            z = np.linalg.solve(L, w[..., None])[..., 0]
            logdet = (n[None] - self.k) * np.log(s2) + 2 * np.log(np.diagonal(L, axis1=2, axis2=3)).sum(-1)
            quad = (rr - np.sum(z * z, axis=-1)) / s2
            out[lo:lo + chunk] = -0.5 * (n[None] * LOG_2PI + logdet + quad)
        return out


def log_posterior(spec: ModelSpec, x) -> float:
    return spec.log_posterior(x)


def grad_log_posterior(spec: ModelSpec, x) -> np.ndarray:
    return spec.grad_log_posterior(x)


def pointwise_loglik(spec: ModelSpec, x, unit: str = "subject") -> np.ndarray:
    return spec.pointwise_loglik(x, unit=unit)
