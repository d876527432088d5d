"""Post hoc identification of loadings and scores, draw by draw.

For each draw the loadings Theta (q x k) are replaced by the leading k
eigenvectors of the q x q matrix Theta Theta^T, and scores are rotated as
alpha*_i = Theta*^T Theta alpha_i. Because Theta* Theta*^T projects onto the
column space of Theta, Theta* alpha*_i = Theta alpha_i exactly. Eigenvector
signs and (near-tied) orders are arbitrary per draw, so a second pass aligns
every draw to a common reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RANK_TOL = 1e-12


class RankDeficiencyError(ValueError):
    pass


def rotate_draw(Theta, alpha, rank_tol: float = RANK_TOL):
    """Return ``(Theta_star, alpha_star, eigenvalues)`` for one draw.

    ``eigenvalues`` are the k largest eigenvalues of Theta Theta^T in
    descending order. Within the draw, each column's largest-magnitude
    coefficient is made positive.
    """
    Theta = np.asarray(Theta, dtype=float)
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    q, k = Theta.shape
    w, V = np.linalg.eigh(Theta @ Theta.T)
    order = np.argsort(w)[::-1][:k]
    w, V = w[order], V[:, order]
    if not w[-1] > rank_tol * max(w[0], np.finfo(float).tiny):
        raise RankDeficiencyError(f"Theta has rank < {k} (eigenvalues {w})")
    pivot = np.argmax(np.abs(V), axis=0)
    V = V * np.sign(V[pivot, np.arange(k)])
    alpha_star = alpha @ (V.T @ Theta).T
    return V, alpha_star, w


def _match(ref: np.ndarray, T: np.ndarray):
    """Greedy column matching of T to ref by |inner product|; returns (perm, signs)."""
    k = ref.shape[1]
    M = ref.T @ T  # (ref col, T col)
    A = np.abs(M).copy()
    perm = np.empty(k, dtype=int)
    signs = np.empty(k)
    for _ in range(k):
        r, c = np.unravel_index(np.argmax(A), A.shape)
        perm[r] = c
        signs[r] = 1.0 if M[r, c] >= 0 else -1.0
        A[r, :] = -1.0
        A[:, c] = -1.0
    return perm, signs


def align_to(ref: np.ndarray, Theta_star: np.ndarray, alpha_star: np.ndarray, eig=None):
    """Permute and sign-flip one draw's components to best match ``ref``."""
    perm, signs = _match(ref, Theta_star)
    T = Theta_star[:, perm] * signs
    A = alpha_star[..., perm] * signs
    if eig is None:
        return T, A
    return T, A, eig[perm]


@dataclass
class RotatedDraws:
    """Identified, aligned posterior draws (only draws of full rank are kept).

    Arrays are indexed by retained draw first. ``draw_index`` maps back to the
    original flat draw position; ``excluded`` lists rank-deficient draws.
    """

    Theta_star: np.ndarray  # (S, q, k)
    alpha_star: np.ndarray  # (S, N, k)
    eigenvalues: np.ndarray  # (S, k), matched to aligned component order
    theta_mu: np.ndarray  # (S, q)
    sigma: np.ndarray  # (S,)
    draw_index: np.ndarray
    excluded: np.ndarray

    @property
    def S(self) -> int:
        return self.Theta_star.shape[0]

    @property
    def k(self) -> int:
        return self.Theta_star.shape[2]

    def reconstruction(self) -> np.ndarray:
        """Theta* alpha*_i for every draw, shape (S, N, q)."""
        return np.einsum("sqk,snk->snq", self.Theta_star, self.alpha_star)

    def score_variance(self) -> np.ndarray:
        """Across-subject variance of each rotated score, per draw: (S, k)."""
        N = self.alpha_star.shape[1]
        if N < 2:
            return np.zeros((self.S, self.k))
        return self.alpha_star.var(axis=1, ddof=1)

    def posterior_mean_loadings(self) -> np.ndarray:
        return self.Theta_star.mean(axis=0)

    def posterior_mean_scores(self) -> np.ndarray:
        return self.alpha_star.mean(axis=0)


def rotate_all(theta_mu, Theta, alpha, sigma, rank_tol: float = RANK_TOL):
    """Rotate every draw; rank-deficient draws are dropped and recorded."""
    Ts, As, Ws, keep, bad = [], [], [], [], []
    for s in range(Theta.shape[0]):
        try:
            T, A, w = rotate_draw(Theta[s], alpha[s], rank_tol)
        except RankDeficiencyError:
            bad.append(s)
            continue
        Ts.append(T)
        As.append(A)
        Ws.append(w)
        keep.append(s)
    if not keep:
        raise RankDeficiencyError("every draw is rank deficient")
    keep = np.array(keep, dtype=int)
    return RotatedDraws(np.stack(Ts), np.stack(As), np.stack(Ws), np.asarray(theta_mu)[keep],
                        np.asarray(sigma)[keep], keep, np.array(bad, dtype=int))


def align_draws(rd: RotatedDraws, passes: int = 2) -> RotatedDraws:
    """Align component order and signs across draws.

    The first valid draw is the initial reference; each further pass uses the
    column-normalized posterior mean of the aligned loadings. Finally
    components are relabelled by descending posterior-mean score variance.
    """
    T = rd.Theta_star.copy()
    A = rd.alpha_star.copy()
    W = rd.eigenvalues.copy()
    ref = T[0].copy()
    for _ in range(passes):
        for s in range(rd.S):
            T[s], A[s], W[s] = align_to(ref, T[s], A[s], W[s])
        ref = T.mean(axis=0)
        ref = ref / np.maximum(np.linalg.norm(ref, axis=0), 1e-300)
    out = RotatedDraws(T, A, W, rd.theta_mu, rd.sigma, rd.draw_index, rd.excluded)
    order = np.argsort(-out.score_variance().mean(axis=0), kind="stable")
    return RotatedDraws(T[:, :, order], A[:, :, order], W[:, order], rd.theta_mu, rd.sigma,
                        rd.draw_index, rd.excluded)


def variance_explained(rd: RotatedDraws) -> dict:
    """Per-draw and posterior-mean shares of trajectory variance by component.

    ``score`` shares use Var_i(alpha*_ij) (components are unit-norm, so this
    is the variance each contributes to the curves); ``eigen`` shares use
    the eigenvalues of Theta Theta^T.
    """
    if rd.k == 1:
        ones = np.ones((rd.S, 1))
        return {"per_draw": ones, "mean": np.ones(1), "eigen_per_draw": ones, "eigen_mean": np.ones(1)}
    v = rd.score_variance()
    tot = v.sum(axis=1, keepdims=True)
    share = np.divide(v, tot, out=np.full_like(v, 1.0 / rd.k), where=tot > 0)
    eig = rd.eigenvalues / rd.eigenvalues.sum(axis=1, keepdims=True)
    return {"per_draw": share, "mean": share.mean(axis=0), "eigen_per_draw": eig, "eigen_mean": eig.mean(axis=0)}
