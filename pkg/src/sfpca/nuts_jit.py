"""Compiled NUTS trajectory builder.

Mirrors :class:`sfpca.nuts._Transition` operation for operation, but runs
inside numba so that the per-leapfrog Python overhead disappears. The log
density is supplied as a jitted ``kernel(x, data) -> (lp, grad)`` plus its
``data`` tuple. Momentum and uniforms are drawn by the caller, so both
paths consume the same random stream.
"""

from __future__ import annotations

import math

import numba
import numpy as np

MAX_DELTA_H = 1000.0


@numba.njit(cache=True)
def _logaddexp(a, b):
    m = a if a > b else b
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.exp(a - m) + math.exp(b - m))


@numba.njit(cache=True)
def _dot(a, b):
    s = 0.0
    for j in range(a.size):
        s += a[j] * b[j]
    return s


@numba.njit(cache=True)
def _eval(kernel, data, x):
    lp, g = kernel(x, data)
    if not np.isfinite(lp):
        return -np.inf, np.zeros_like(x)
    for j in range(g.size):
        if not np.isfinite(g[j]):
            return -np.inf, np.zeros_like(x)
    return lp, g


@numba.njit(cache=True)
def _hamiltonian(lp, p, inv):
    if not np.isfinite(lp):
        return np.inf
    s = 0.0
    for j in range(p.size):
        s += p[j] * inv[j] * p[j]
    return -lp + 0.5 * s


@numba.njit(cache=True)
def _build(depth, x, p, lp, g, v, H0, eps, inv, kernel, data, u, state):
    # state = [next uniform index, n_leapfrog, sum of metropolis probs, divergent]
    if depth == 0:
        step = v * eps
        p_half = p + 0.5 * step * g
        x_new = x + step * inv * p_half
        lp_new, g_new = _eval(kernel, data, x_new)
        p_new = p_half + 0.5 * step * g_new
        state[1] += 1.0
        H = _hamiltonian(lp_new, p_new, inv)
        if math.isnan(H):
            H = math.inf
        if H - H0 > MAX_DELTA_H:
            state[3] = 1.0
        state[2] += 1.0 if H0 - H > 0 else math.exp(H0 - H)
        ps = inv * p_new
        return (x_new, p_new, lp_new, g_new, x_new, lp_new, g_new,
                p_new, p_new, ps, ps, p_new.copy(), H0 - H, state[3] == 0.0)

    t1 = _build(depth - 1, x, p, lp, g, v, H0, eps, inv, kernel, data, u, state)
    if not t1[13]:
        return t1
    t2 = _build(depth - 1, t1[0], t1[1], t1[2], t1[3], v, H0, eps, inv, kernel, data, u, state)
    if not t2[13]:
        return t2
    lsw = _logaddexp(t1[12], t2[12])
    ui = int(state[0])
    state[0] += 1.0
    if u[ui] < math.exp(t2[12] - lsw):
        xp, lpp, gp = t2[4], t2[5], t2[6]
    else:
        xp, lpp, gp = t1[4], t1[5], t1[6]
    rho = t1[11] + t2[11]
    ok = _dot(t2[10], rho) > 0 and _dot(t1[9], rho) > 0
    ok = ok and _dot(t2[9], t1[11] + t2[7]) > 0 and _dot(t1[9], t1[11] + t2[7]) > 0
    ok = ok and _dot(t2[10], t2[11] + t1[8]) > 0 and _dot(t1[10], t2[11] + t1[8]) > 0
    return (t2[0], t2[1], t2[2], t2[3], xp, lpp, gp, t1[7], t2[8], t1[9], t2[10], rho, lsw, ok)


@numba.njit(cache=True)
def _transition(kernel, data, x, lp, g, p0, eps, inv, u, max_depth):
    state = np.zeros(4)
    H0 = _hamiltonian(lp, p0, inv)
    x_f, p_f, lp_f, g_f = x, p0, lp, g
    x_b, p_b, lp_b, g_b = x, p0, lp, g
    ps0 = inv * p0
    p_ff = p0
    p_fb = p0
    p_bf = p0
    p_bb = p0
    ps_ff = ps0
    ps_fb = ps0
    ps_bf = ps0
    ps_bb = ps0
    rho = p0.copy()
    rho_f = rho
    rho_b = rho
    lsw = 0.0
    xs, lps, gs = x, lp, g
    depth = 0
    while depth < max_depth:
        ui = int(state[0])
        state[0] += 1.0
        if u[ui] > 0.5:
            rho_b = rho
            p_bf, ps_bf = p_ff, ps_ff
            t = _build(depth, x_f, p_f, lp_f, g_f, 1.0, H0, eps, inv, kernel, data, u, state)
            x_f, p_f, lp_f, g_f = t[0], t[1], t[2], t[3]
            rho_f = t[11]
            p_fb, ps_fb, p_ff, ps_ff = t[7], t[9], t[8], t[10]
        else:
            rho_f = rho
            p_fb, ps_fb = p_bb, ps_bb
            t = _build(depth, x_b, p_b, lp_b, g_b, -1.0, H0, eps, inv, kernel, data, u, state)
            x_b, p_b, lp_b, g_b = t[0], t[1], t[2], t[3]
            rho_b = t[11]
            p_bf, ps_bf, p_bb, ps_bb = t[7], t[9], t[8], t[10]
        if not t[13]:
            break
        depth += 1
        ui = int(state[0])
        state[0] += 1.0
        if t[12] > lsw or u[ui] < math.exp(t[12] - lsw):
            xs, lps, gs = t[4], t[5], t[6]
        lsw = _logaddexp(lsw, t[12])
        rho = rho_b + rho_f
        ok = _dot(ps_ff, rho) > 0 and _dot(ps_bb, rho) > 0
        r2 = rho_b + p_fb
        ok = ok and _dot(ps_fb, r2) > 0 and _dot(ps_bb, r2) > 0
        r3 = rho_f + p_bf
        ok = ok and _dot(ps_ff, r3) > 0 and _dot(ps_bf, r3) > 0
        if not ok:
            break
    n_lf = state[1]
    accept = state[2] / max(n_lf, 1.0)
    return xs, lps, gs, accept, depth, int(n_lf), state[3] != 0.0


def jit_transition(kernel, data, x, lp, grad, p0, eps, inv_metric, u, max_depth):
    """Run one compiled transition; same return layout as :func:`sfpca.nuts.transition`."""
    xs, lps, gs, accept, depth, n_lf, div = _transition(
        kernel, data, x, float(lp), grad, p0, float(eps), inv_metric, u, int(max_depth))
    return xs, float(lps), gs, float(accept), int(depth), int(n_lf), bool(div)


@numba.njit(cache=True)
def gaussian_kernel(x, data):
    """Independent normal log density; ``data = (mean, sd)``. Used in tests and demos."""
    mean, sd = data
    z = (x - mean) / sd
    return -0.5 * _dot(z, z), -z / sd
