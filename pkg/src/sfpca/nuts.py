"""No-U-Turn Hamiltonian Monte Carlo with Stan-style warmup.

The transition is the multinomial variant: the next state is drawn from the
whole trajectory with weights exp(-H), biased toward the newest subtree at
the top level and uniform inside subtrees. Termination uses the generalized
U-turn criterion on summed momenta, including the extra checks across
subtree boundaries.

Warmup follows the usual windowed scheme: a fast initial buffer (75 iters),
doubling slow windows starting at 25 iters for the diagonal inverse metric,
and a terminal buffer (50 iters), with dual-averaging step-size adaptation
restarted after every metric update.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)

LogpGrad = Callable[[np.ndarray], "tuple[float, np.ndarray]"]

MAX_DELTA_H = 1000.0
INIT_RETRIES = 100


class SamplerInitError(RuntimeError):
    pass


class SamplerConfigError(ValueError):
    pass


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    iters: int = 1000
    target_accept: float = 0.8
    max_treedepth: int = 10
    seed: int = 0
    adapt: bool = True
    init_radius: float = 2.0
    init_step_size: float = 1.0

    def __post_init__(self):
        if self.chains < 1:
            raise SamplerConfigError("chains must be >= 1")
        if self.iters < 1:
            raise SamplerConfigError("iters must be >= 1")
        if self.adapt and self.warmup < 150:
            raise SamplerConfigError("warmup must be >= 150 when adaptation is enabled")
        if self.warmup < 0:
            raise SamplerConfigError("warmup must be >= 0")
        if not 0 < self.target_accept < 1:
            raise SamplerConfigError("target_accept must lie in (0, 1)")
        if self.max_treedepth < 1:
            raise SamplerConfigError("max_treedepth must be >= 1")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class SamplerResult:
    """Post-warmup output, arrays indexed (chain, iteration, ...)."""

    draws: np.ndarray
    lp: np.ndarray
    accept_stat: np.ndarray
    divergent: np.ndarray
    treedepth: np.ndarray
    n_leapfrog: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    config: SamplerConfig
    warnings: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    def flat(self) -> np.ndarray:
        """Draws stacked chain by chain, shape (S, dim)."""
        return self.draws.reshape(-1, self.draws.shape[-1])

    def divergence_rate(self) -> float:
        return float(self.divergent.mean())

    def chain_summary(self) -> list[dict]:
        out = []
        for c in range(self.n_chains):
            out.append({
                "chain": c,
                "mean_accept_stat": float(self.accept_stat[c].mean()),
                "divergences": int(self.divergent[c].sum()),
                "treedepth_saturated": int((self.treedepth[c] >= self.config.max_treedepth).sum()),
                "mean_leapfrog": float(self.n_leapfrog[c].mean()),
                "step_size": float(self.step_size[c]),
            })
        return out


# ---------------------------------------------------------------------------
# adaptation


class DualAveraging:
    def __init__(self, delta: float, gamma=0.05, kappa=0.75, t0=10.0):
        self.delta, self.gamma, self.kappa, self.t0 = delta, gamma, kappa, t0
        self.restart(1.0)

    def restart(self, step_size: float):
        self.mu = math.log(10 * step_size)
        self.counter = 0
        self.s_bar = 0.0
        self.x_bar = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)

    def final(self) -> float:
        return math.exp(self.x_bar)


class WindowedMetric:
    """Diagonal metric estimation over doubling windows."""

    def __init__(self, dim: int, num_warmup: int, init_buffer=75, term_buffer=50, base_window=25):
        if init_buffer + base_window + term_buffer > num_warmup:
            init_buffer = int(0.15 * num_warmup)
            term_buffer = int(0.1 * num_warmup)
            base_window = num_warmup - (init_buffer + term_buffer)
        self.num_warmup = num_warmup
        self.init_buffer, self.term_buffer = init_buffer, term_buffer
        self.window_size = base_window
        self.next_window = init_buffer + base_window - 1
        self.counter = 0
        self.dim = dim
        self._reset_estimator()

    def _reset_estimator(self):
        self.n = 0
        self.m = np.zeros(self.dim)
        self.m2 = np.zeros(self.dim)

    def _in_window(self):
        return (self.counter >= self.init_buffer
                and self.counter < self.num_warmup - self.term_buffer
                and self.counter != self.num_warmup)

    def _end_window(self):
        return self.counter == self.next_window and self.counter != self.num_warmup

    def _compute_next_window(self):
        last = self.num_warmup - self.term_buffer - 1
        if self.next_window == last:
            return
        self.window_size *= 2
        self.next_window = self.counter + self.window_size
        if self.next_window != last:
            if self.next_window + 2 * self.window_size >= self.num_warmup - self.term_buffer:
                self.next_window = last

    def observe(self, x: np.ndarray):
        """Feed one warmup draw; returns a new inverse metric at window ends, else None."""
        if self._in_window():
            self.n += 1
            d = x - self.m
            self.m += d / self.n
            self.m2 += d * (x - self.m)
        if self._end_window():
            self._compute_next_window()
            n = self.n
            var = self.m2 / (n - 1) if n > 1 else np.ones(self.dim)
            var = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            self._reset_estimator()
            self.counter += 1
            return var
        self.counter += 1
        return None


# ---------------------------------------------------------------------------
# integrator and trajectory


@dataclass
class _Point:
    x: np.ndarray
    p: np.ndarray
    lp: float
    grad: np.ndarray


@dataclass
class _Subtree:
    z_end: _Point
    prop: _Point
    p_beg: np.ndarray
    p_end: np.ndarray
    ps_beg: np.ndarray
    ps_end: np.ndarray
    rho: np.ndarray
    lsw: float
    valid: bool


def _safe_eval(logp_grad: LogpGrad, x: np.ndarray):
    try:
        lp, g = logp_grad(x)
    except (ValueError, FloatingPointError, OverflowError, ArithmeticError):
        return -np.inf, np.zeros_like(x)
    if not (np.isfinite(lp) and np.all(np.isfinite(g))):
        return -np.inf, np.zeros_like(x)
    return float(lp), g


def leapfrog(logp_grad: LogpGrad, z: _Point, eps: float, inv_metric: np.ndarray) -> _Point:
    """One velocity-Verlet step of signed size ``eps``."""
    p_half = z.p + 0.5 * eps * z.grad
    x_new = z.x + eps * inv_metric * p_half
    lp, g = _safe_eval(logp_grad, x_new)
    return _Point(x_new, p_half + 0.5 * eps * g, lp, g)


def hamiltonian(z: _Point, inv_metric: np.ndarray) -> float:
    if not np.isfinite(z.lp):
        return np.inf
    return -z.lp + 0.5 * float(z.p @ (inv_metric * z.p))


def _no_uturn(ps_minus, ps_plus, rho) -> bool:
    return float(ps_plus @ rho) > 0 and float(ps_minus @ rho) > 0


def _logaddexp(a: float, b: float) -> float:
    m = a if a > b else b
    if m == -math.inf:
        return -math.inf
    return m + math.log(math.exp(a - m) + math.exp(b - m))


def uniforms_needed(max_depth: int) -> int:
    """Upper bound on uniforms one transition consumes (merges + 2 per doubling)."""
    return 2 ** max_depth + 2 * max_depth


class _Transition:
    """One NUTS transition; holds per-transition accumulators.

    All randomness beyond the initial momentum comes from the pre-drawn
    uniform buffer ``u`` so that the compiled trajectory builder in
    :mod:`sfpca.nuts_jit` consumes exactly the same stream.
    """

    def __init__(self, logp_grad, eps, inv_metric, u, max_depth):
        self.logp_grad = logp_grad
        self.eps = eps
        self.inv_metric = inv_metric
        self.u = u
        self.ui = 0
        self.max_depth = max_depth
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False

    def _uniform(self) -> float:
        val = self.u[self.ui]
        self.ui += 1
        return val

    def build(self, depth: int, z: _Point, v: int, H0: float) -> _Subtree:
        if depth == 0:
            z_new = leapfrog(self.logp_grad, z, v * self.eps, self.inv_metric)
            self.n_leapfrog += 1
            H = hamiltonian(z_new, self.inv_metric)
            if math.isnan(H):
                H = math.inf
            if H - H0 > MAX_DELTA_H:
                self.divergent = True
            self.sum_metro += 1.0 if H0 - H > 0 else math.exp(H0 - H)
            ps = self.inv_metric * z_new.p
            return _Subtree(z_new, z_new, z_new.p, z_new.p, ps, ps, z_new.p.copy(), H0 - H,
                            not self.divergent)

        init = self.build(depth - 1, z, v, H0)
        if not init.valid:
            return init
        final = self.build(depth - 1, init.z_end, v, H0)
        if not final.valid:
            return final
        lsw = _logaddexp(init.lsw, final.lsw)
        prop = final.prop if self._uniform() < math.exp(final.lsw - lsw) else init.prop
        rho = init.rho + final.rho
        ok = _no_uturn(init.ps_beg, final.ps_end, rho)
        ok = ok and _no_uturn(init.ps_beg, final.ps_beg, init.rho + final.p_beg)
        ok = ok and _no_uturn(init.ps_end, final.ps_end, final.rho + init.p_end)
        return _Subtree(final.z_end, prop, init.p_beg, final.p_end, init.ps_beg, final.ps_end,
                        rho, lsw, ok)

    def run(self, x: np.ndarray, lp: float, grad: np.ndarray, p0: np.ndarray):
        inv = self.inv_metric
        z0 = _Point(x, p0, lp, grad)
        H0 = hamiltonian(z0, inv)
        z_fwd = z_bck = z0
        ps0 = inv * p0
        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = p0
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = ps0
        rho = p0.copy()
        lsw = 0.0
        sample = z0
        depth = 0
        while depth < self.max_depth:
            if self._uniform() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_fwd, ps_fwd_fwd
                t = self.build(depth, z_fwd, 1, H0)
                z_fwd = t.z_end
                rho_fwd = t.rho
                p_fwd_bck, ps_fwd_bck, p_fwd_fwd, ps_fwd_fwd = t.p_beg, t.ps_beg, t.p_end, t.ps_end
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_bck, ps_bck_bck
                t = self.build(depth, z_bck, -1, H0)
                z_bck = t.z_end
                rho_bck = t.rho
                p_bck_fwd, ps_bck_fwd, p_bck_bck, ps_bck_bck = t.p_beg, t.ps_beg, t.p_end, t.ps_end
            if not t.valid:
                break
            depth += 1
            uu = self._uniform()
            if t.lsw > lsw or uu < math.exp(t.lsw - lsw):
                sample = t.prop
            lsw = _logaddexp(lsw, t.lsw)
            rho = rho_bck + rho_fwd
            ok = _no_uturn(ps_bck_bck, ps_fwd_fwd, rho)
            ok = ok and _no_uturn(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            ok = ok and _no_uturn(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not ok:
                break
        accept = self.sum_metro / max(self.n_leapfrog, 1)
        return sample, accept, depth


def transition(logp_grad, x, lp, grad, eps, inv_metric, rng, max_depth, jit=None):
    """Draw momentum and uniforms from ``rng`` and run one transition.

    Returns ``(x, lp, grad, accept_stat, depth, n_leapfrog, divergent)``.
    ``jit`` is an optional ``(kernel, data)`` pair for the compiled path.
    """
    p0 = rng.standard_normal(x.size) / np.sqrt(inv_metric)
    u = rng.uniform(size=uniforms_needed(max_depth))
    if jit is not None:
        from .nuts_jit import jit_transition
        return jit_transition(jit[0], jit[1], x, lp, grad, p0, eps, inv_metric, u, max_depth)
    tr = _Transition(logp_grad, eps, inv_metric, u, max_depth)
    z, accept, depth = tr.run(x, lp, grad, p0)
    return z.x, z.lp, z.grad, accept, depth, tr.n_leapfrog, tr.divergent


def find_reasonable_step_size(logp_grad, x, lp, grad, eps, inv_metric, rng) -> float:
    """Double or halve ``eps`` until one-step acceptance crosses 0.8."""
    log_target = math.log(0.8)

    def delta_h(e):
        p = rng.standard_normal(x.size) / np.sqrt(inv_metric)
        z = _Point(x, p, lp, grad)
        H0 = hamiltonian(z, inv_metric)
        H1 = hamiltonian(leapfrog(logp_grad, z, e, inv_metric), inv_metric)
        return -np.inf if math.isnan(H1) else H0 - H1

    direction = 1 if delta_h(eps) > log_target else -1
    for _ in range(100):
        new = eps * 2.0 ** direction
        dh = delta_h(new)
        if direction == 1 and not dh > log_target:
            break
        if direction == -1 and not dh < log_target:
            eps = new
            break
        eps = new
        if eps > 1e7 or eps < 1e-12:
            raise SamplerInitError("step size search diverged; posterior may be improper")
    return eps


def initialize(logp_grad, dim, rng, radius=2.0, init=None):
    if init is not None:
        x = np.asarray(init, dtype=float).copy()
        lp, g = _safe_eval(logp_grad, x)
        if np.isfinite(lp):
            return x, lp, g
        raise SamplerInitError("supplied initial point has non-finite density")
    for _ in range(INIT_RETRIES):
        x = rng.uniform(-radius, radius, size=dim)
        lp, g = _safe_eval(logp_grad, x)
        if np.isfinite(lp):
            return x, lp, g
    raise SamplerInitError(f"non-finite density at {INIT_RETRIES} random initial points")


def run_chain(logp_grad: LogpGrad, dim: int, config: SamplerConfig, seed_seq, init=None, jit=None) -> dict:
    rng = np.random.default_rng(seed_seq)
    x, lp, grad = initialize(logp_grad, dim, rng, config.init_radius, init)
    inv_metric = np.ones(dim)
    eps = config.init_step_size
    n_warm, n_iter = config.warmup, config.iters

    if config.adapt and n_warm > 0:
        eps = find_reasonable_step_size(logp_grad, x, lp, grad, eps, inv_metric, rng)
        da = DualAveraging(config.target_accept)
        da.restart(eps)
        metric = WindowedMetric(dim, n_warm)
    for it in range(n_warm):
        x, lp, grad, accept, *_ = transition(logp_grad, x, lp, grad, eps, inv_metric, rng,
                                             config.max_treedepth, jit)
        if config.adapt:
            eps = da.update(accept)
            new_var = metric.observe(x)
            if new_var is not None:
                inv_metric = new_var
                eps = find_reasonable_step_size(logp_grad, x, lp, grad, eps, inv_metric, rng)
                da.restart(eps)
    if config.adapt and n_warm > 0:
        eps = da.final()

    out = {
        "draws": np.empty((n_iter, dim)), "lp": np.empty(n_iter), "accept_stat": np.empty(n_iter),
        "divergent": np.zeros(n_iter, dtype=bool), "treedepth": np.zeros(n_iter, dtype=int),
        "n_leapfrog": np.zeros(n_iter, dtype=int),
    }
    for it in range(n_iter):
        x, lp, grad, accept, depth, n_lf, div = transition(logp_grad, x, lp, grad, eps, inv_metric,
                                                           rng, config.max_treedepth, jit)
        out["draws"][it] = x
        out["lp"][it] = lp
        out["accept_stat"][it] = accept
        out["divergent"][it] = div
        out["treedepth"][it] = depth
        out["n_leapfrog"][it] = n_lf
    out["step_size"] = eps
    out["inv_metric"] = inv_metric
    return out


def _run_chain_star(args):
    return run_chain(*args)


def sample(logp_grad: LogpGrad, dim: int, config: SamplerConfig, init=None, n_jobs: int = 1,
           jit=None) -> SamplerResult:
    """Run ``config.chains`` independent NUTS chains on a log density.

    ``logp_grad(x)`` must return ``(log density, gradient)``. Chain c uses
    the c-th child of ``SeedSequence(config.seed)``, so results do not depend
    on ``n_jobs`` or on scheduling. ``jit=(kernel, data)`` runs trajectories
    through the compiled builder (see :mod:`sfpca.nuts_jit`); it must compute
    the same density as ``logp_grad``.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    inits = init if (init is not None and np.ndim(init) == 2) else [init] * config.chains
    jobs = [(logp_grad, dim, config, seeds[c], inits[c], jit) for c in range(config.chains)]
    if n_jobs > 1 and config.chains > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            chains = list(ex.map(_run_chain_star, jobs))
    else:
        chains = [run_chain(*job) for job in jobs]

    res = SamplerResult(
        draws=np.stack([c["draws"] for c in chains]),
        lp=np.stack([c["lp"] for c in chains]),
        accept_stat=np.stack([c["accept_stat"] for c in chains]),
        divergent=np.stack([c["divergent"] for c in chains]),
        treedepth=np.stack([c["treedepth"] for c in chains]),
        n_leapfrog=np.stack([c["n_leapfrog"] for c in chains]),
        step_size=np.array([c["step_size"] for c in chains]),
        inv_metric=np.stack([c["inv_metric"] for c in chains]),
        config=config,
    )
    rate = res.divergence_rate()
    if rate > 0.10:
        msg = f"{100 * rate:.1f}% of post-warmup transitions diverged"
        res.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    sat = int((res.treedepth >= config.max_treedepth).sum())
    if sat:
        res.warnings.append(f"{sat} transitions hit max_treedepth={config.max_treedepth}")
    return res


def check_gradient(logp_grad: LogpGrad, x, h=1e-5, rtol=1e-5, atol=1e-8, coords=None) -> tuple[bool, float]:
    """Central finite-difference check; returns (ok, worst scaled error)."""
    x = np.asarray(x, dtype=float)
    _, g = logp_grad(x)
    idx = range(x.size) if coords is None else coords
    worst = 0.0
    for j in idx:
        e = np.zeros_like(x)
        e[j] = h
        fd = (logp_grad(x + e)[0] - logp_grad(x - e)[0]) / (2 * h)
        err = abs(fd - g[j]) / (atol + rtol * max(abs(fd), abs(g[j])))
        worst = max(worst, err)
    return worst <= 1.0, worst
