"""Cubic B-spline bases on [0, 1], orthonormalized in L2.

Raw B-splines come from the Cox-de Boor recursion on a clamped knot vector.
They are then orthonormalized by modified Gram-Schmidt under the composite
trapezoid inner product on a uniform grid, so for any t

    b(t) = transform @ raw(t),    sum_m w_m b(x_m) b(x_m)^T = I_q.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORDER = 4  # cubic
DEGREE = ORDER - 1
DEFAULT_QUAD_POINTS = 1001
KNOT_JITTER = 1e-6


class KnotPlacementError(ValueError):
    pass


class IllConditionedBasisError(ValueError):
    pass


class BasisDomainError(ValueError):
    pass


def place_knots(times, n_internal: int, method: str = "quantile") -> np.ndarray:
    """Internal knot locations for a cubic basis on [0, 1].

    ``method="quantile"`` puts knot j at the j/(n_internal+1) empirical
    quantile of the pooled ``times``; ``"uniform"`` spaces knots evenly over
    [0, 1]. Tied or boundary-touching knots are pushed apart by 1e-6; if that
    cannot produce a strictly increasing sequence inside (0, 1) a
    :class:`KnotPlacementError` is raised.
    """
    if n_internal < 0:
        raise KnotPlacementError("n_internal must be >= 0")
    times = np.asarray(times, dtype=float).ravel()
    if times.size == 0:
        raise KnotPlacementError("no observation times given")
    if n_internal == 0:
        return np.empty(0)
    probs = np.arange(1, n_internal + 1) / (n_internal + 1)
    if method == "quantile":
        knots = np.quantile(times, probs)
    elif method == "uniform":
        knots = probs.copy()
    else:
        raise ValueError(f"unknown knot placement method {method!r}")

    knots = np.maximum(knots, KNOT_JITTER)
    for j in range(1, n_internal):
        if knots[j] - knots[j - 1] < KNOT_JITTER:
            knots[j] = knots[j - 1] + KNOT_JITTER
    if knots[-1] > 1 - KNOT_JITTER:
        knots[-1] = 1 - KNOT_JITTER
        for j in range(n_internal - 2, -1, -1):
            if knots[j + 1] - knots[j] < KNOT_JITTER:
                knots[j] = knots[j + 1] - KNOT_JITTER
    gaps = np.diff(np.concatenate([[0.0], knots, [1.0]]))
    if np.any(gaps < KNOT_JITTER * (1 - 1e-9)):
        raise KnotPlacementError(
            f"{n_internal} internal knots collide beyond perturbation; use fewer knots")
    return knots


def full_knot_vector(internal_knots) -> np.ndarray:
    internal = np.asarray(internal_knots, dtype=float)
    return np.concatenate([np.zeros(ORDER), internal, np.ones(ORDER)])


def bspline_raw(x, internal_knots) -> np.ndarray:
    """Evaluate the q = len(internal_knots) + 4 cubic B-splines at ``x``.

    Cox-de Boor recursion, vectorized over x. The right endpoint x = 1 is
    assigned to the last non-empty interval so the basis is right-continuous
    there and partition of unity holds on the closed interval.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = full_knot_vector(internal_knots)
    n_int = len(t) - 1
    # degree-0 indicator functions
    B = np.zeros((x.size, n_int))
    idx = np.searchsorted(t, x, side="right") - 1
    last = n_int - ORDER  # index of the last non-degenerate interval [t_last, 1]
    idx = np.clip(idx, DEGREE, last)
    B[np.arange(x.size), idx] = 1.0
    for d in range(1, ORDER):
        nb = n_int - d
        left_den = t[d:d + nb] - t[:nb]
        right_den = t[d + 1:d + 1 + nb] - t[1:1 + nb]
        with np.errstate(divide="ignore", invalid="ignore"):
            left = np.where(left_den > 0, (x[:, None] - t[:nb]) / left_den, 0.0)
            right = np.where(right_den > 0, (t[d + 1:d + 1 + nb] - x[:, None]) / right_den, 0.0)
        B = left * B[:, :nb] + right * B[:, 1:nb + 1]
    return B


def trapezoid_rule(n_points: int) -> tuple[np.ndarray, np.ndarray]:
    nodes = np.linspace(0.0, 1.0, n_points)
    w = np.full(n_points, 1.0 / (n_points - 1))
    w[[0, -1]] *= 0.5
    return nodes, w


def gram_schmidt(raw_on_grid: np.ndarray, weights: np.ndarray, passes: int = 2,
                 rank_tol: float = 1e-10) -> np.ndarray:
    """Coefficients C with (raw @ C.T) orthonormal under sum_m w_m u_m v_m.

    Modified Gram-Schmidt with re-orthogonalization (``passes`` sweeps).
    """
    V = raw_on_grid.T.astype(float).copy()  # q x m, rows are functions
    q = V.shape[0]
    C = np.eye(q)
    for j in range(q):
        for _ in range(passes):
            for i in range(j):
                proj = np.dot(weights * V[i], V[j])
                V[j] -= proj * V[i]
                C[j] -= proj * C[i]
        norm = np.sqrt(np.dot(weights, V[j] * V[j]))
        ref = np.sqrt(np.dot(weights, raw_on_grid[:, j] ** 2))
        if not norm > rank_tol * max(ref, 1e-300):
            raise IllConditionedBasisError(f"basis function {j} is linearly dependent on the grid")
        V[j] /= norm
        C[j] /= norm
    return C


@dataclass(frozen=True)
class OrthonormalBasis:
    internal_knots: np.ndarray
    quad_nodes: np.ndarray
    quad_weights: np.ndarray
    transform: np.ndarray
    boundary: tuple[float, float] = field(default=(0.0, 1.0))

    @property
    def q(self) -> int:
        return len(self.internal_knots) + ORDER

    def raw(self, times) -> np.ndarray:
        return bspline_raw(times, self.internal_knots)

    def evaluate(self, times) -> np.ndarray:
        """Rows are b(t)^T for each t; raises on times outside [0, 1]."""
        t = np.atleast_1d(np.asarray(times, dtype=float))
        if np.any(~np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
            bad = t[~((t >= 0) & (t <= 1))][0]
            raise BasisDomainError(f"time {bad!r} outside [0, 1]; no extrapolation")
        return self.raw(t) @ self.transform.T

    def gram(self, nodes=None, weights=None) -> np.ndarray:
        if nodes is None:
            nodes, weights = self.quad_nodes, self.quad_weights
        E = self.evaluate(nodes)
        return E.T @ (weights[:, None] * E)

    def integrals(self) -> np.ndarray:
        """Quadrature integral of each orthonormal basis function over [0, 1].

        Since the constant function lies in the spline space, these are the
        coefficients of f(t) = 1 in the orthonormal basis.
        """
        return self.quad_weights @ self.evaluate(self.quad_nodes)

    def summary(self) -> dict:
        return {"q": self.q, "internal_knots": [float(k) for k in self.internal_knots],
                "quad_points": int(self.quad_nodes.size), "quadrature": "trapezoid"}


def build_basis(knots, quad_points: int = DEFAULT_QUAD_POINTS) -> OrthonormalBasis:
    knots = np.asarray(knots, dtype=float).ravel()
    if knots.size and (np.any(knots <= 0) or np.any(knots >= 1) or np.any(np.diff(knots) <= 0)):
        raise KnotPlacementError("internal knots must be strictly increasing inside (0, 1)")
    q = knots.size + ORDER
    if quad_points < 10 * q:
        raise ValueError(f"quad_points={quad_points} too small for q={q} (need >= {10 * q})")
    nodes, weights = trapezoid_rule(quad_points)
    raw = bspline_raw(nodes, knots)
    C = gram_schmidt(raw, weights)
    return OrthonormalBasis(internal_knots=knots, quad_nodes=nodes, quad_weights=weights, transform=C)
