"""Hamiltonian Monte Carlo with No-U-Turn trajectories.

The transition is multinomial NUTS with the generalised U-turn criterion
(including the checks across merged subtrees), a diagonal metric and a
dual-averaging step size. Warm-up follows the usual three-phase schedule: a
fast window that only adapts the step size, a sequence of doubling slow
windows that estimate the metric, and a final fast window.

Everything operates on a single callable ``logp_grad(x) -> (log_prob, grad)``
over an unconstrained vector.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import stats

from .errors import AdaptationError, InvalidArgumentError, RunFailureError

log = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
RHAT_CAP = 1e6


@dataclass(frozen=True)
class SamplerConfig:
    """Sampling protocol.

    ``samples`` counts *total* iterations per chain, of which the first
    ``warmup`` are used for adaptation and discarded; each chain retains
    ``samples - warmup`` draws.
    """

    chains: int = 4
    warmup: int = 1000
    samples: int = 2500
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_jitter: float = 2.0
    initializations: int = 5
    n_jobs: int = 1

    def __post_init__(self):
        if self.chains < 1 or self.warmup < 1 or self.samples < 1 or self.initializations < 1:
            raise InvalidArgumentError("chains, warmup, samples and initializations must all be >= 1")
        if self.samples <= self.warmup:
            raise InvalidArgumentError(f"samples ({self.samples}) must exceed warmup ({self.warmup})")
        if not 0 < self.target_accept < 1:
            raise InvalidArgumentError(f"target_accept must lie in (0, 1), got {self.target_accept}")
        if self.max_tree_depth < 1:
            raise InvalidArgumentError("max_tree_depth must be >= 1")
        if self.init_jitter < 0:
            raise InvalidArgumentError("init_jitter must be >= 0")

    @property
    def retained(self) -> int:
        return self.samples - self.warmup


@dataclass
class ChainResult:
    draws: np.ndarray          # (retained, P), unconstrained
    log_prob: np.ndarray       # (retained,)
    accept_stat: np.ndarray    # (retained,)
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    divergent: np.ndarray
    step_size: float
    inv_mass: np.ndarray
    seed: tuple
    warmup_divergences: int = 0
    seconds: float = 0.0

    @property
    def mass_diag(self) -> np.ndarray:
        return 1.0 / self.inv_mass


@dataclass
class PosteriorDraws:
    chains: list                              # list[ChainResult]
    initialization: int = 0
    init_scores: list = field(default_factory=list)
    failed_initializations: dict = field(default_factory=dict)

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    def stacked(self) -> np.ndarray:
        """Draws as ``(chains, retained, P)``."""
        return np.stack([c.draws for c in self.chains])

    def divergences(self) -> list:
        return [int(c.divergent.sum()) for c in self.chains]


@dataclass
class ChainDiagnostics:
    rhat: np.ndarray
    ess_bulk: np.ndarray
    divergences: list
    degenerate: np.ndarray     # zero-variance coordinates (ESS not meaningful)
    separated: np.ndarray      # R-hat infinite (chains disjoint), reported as RHAT_CAP

    def summary(self) -> dict:
        ok = ~self.degenerate
        return {
            "max_rhat": float(np.max(self.rhat[ok])) if ok.any() else float("nan"),
            "min_ess_bulk": float(np.min(self.ess_bulk[ok])) if ok.any() else float("nan"),
            "divergences": list(self.divergences),
            "n_degenerate": int(self.degenerate.sum()),
            "n_separated": int(self.separated.sum()),
        }


# -- integrator --------------------------------------------------------------

def leapfrog(position, momentum, step_size, mass_diag, grad_fn):
    """One leapfrog step of Hamiltonian dynamics for ``H = -log p(q) + p^T M^-1 p / 2``.

    ``grad_fn`` returns the gradient of the log density. Non-finite results are
    returned as-is; the caller decides whether the step diverged.
    """
    inv_mass = 1.0 / np.asarray(mass_diag, dtype=float)
    with np.errstate(all="ignore"):
        p = momentum + 0.5 * step_size * grad_fn(position)
        q = position + step_size * inv_mass * p
        p = p + 0.5 * step_size * grad_fn(q)
    return q, p


@njit(cache=True)
def _drift(q, p, g, eps, inv_mass):
    """Half kick then full drift; returns ``(q_new, p_half)``."""
    n = q.shape[0]
    q1 = np.empty(n)
    p1 = np.empty(n)
    for i in range(n):
        p1[i] = p[i] + 0.5 * eps * g[i]
        q1[i] = q[i] + eps * inv_mass[i] * p1[i]
    return q1, p1


@njit(cache=True)
def _kick(p, g, eps, inv_mass):
    """Closing half kick; returns ``(p_new, M^-1 p_new, kinetic energy)``."""
    n = p.shape[0]
    ps = np.empty(n)
    kin = 0.0
    for i in range(n):
        p[i] += 0.5 * eps * g[i]
        ps[i] = inv_mass[i] * p[i]
        kin += p[i] * ps[i]
    return p, ps, 0.5 * kin


def _leapfrog_cached(q, p, g, eps, inv_mass, logp_grad):
    q, p = _drift(q, p, g, eps, inv_mass)
    lp, g = logp_grad(q)
    p, ps, kin = _kick(p, g, eps, inv_mass)
    return q, p, lp, g, ps, kin


# -- NUTS --------------------------------------------------------------------

@dataclass
class _State:
    q: np.ndarray
    lp: float
    g: np.ndarray


class _Subtree:
    __slots__ = ("valid", "proposal", "log_w", "rho", "p_beg", "p_end", "ps_beg", "ps_end",
                 "edge", "sum_accept", "n_leapfrog", "divergent")


@dataclass
class DrawInfo:
    accept_stat: float
    tree_depth: int
    n_leapfrog: int
    divergent: bool


@njit(cache=True)
def _uturn_ok(ps_a, ps_b, rho):
    a = 0.0
    b = 0.0
    for i in range(rho.shape[0]):
        a += ps_a[i] * rho[i]
        b += ps_b[i] * rho[i]
    return a > 0.0 and b > 0.0


@njit(cache=True)
def _merge_ok(ps_l, ps_r, rho_l, rho_r, ps_lb, p_lb, ps_rb, p_rb, rho_out):
    """Generalised no-U-turn check for a tree made of two adjacent halves.

    Halves are given in build order: ``(ps_lb, p_lb)`` is the far end of the
    first half, ``(ps_rb, p_rb)`` the near end of the second. Also writes the
    merged ``rho`` to ``rho_out``.
    """
    n = rho_l.shape[0]
    full_l = full_r = 0.0
    a_l = a_r = 0.0
    b_l = b_r = 0.0
    for i in range(n):
        r = rho_l[i] + rho_r[i]
        rho_out[i] = r
        full_l += ps_l[i] * r
        full_r += ps_r[i] * r
        ra = rho_l[i] + p_rb[i]
        a_l += ps_l[i] * ra
        a_r += ps_rb[i] * ra
        rb = rho_r[i] + p_lb[i]
        b_l += ps_lb[i] * rb
        b_r += ps_r[i] * rb
    return full_l > 0.0 and full_r > 0.0 and a_l > 0.0 and a_r > 0.0 and b_l > 0.0 and b_r > 0.0


def _logaddexp(a, b):
    if a == -math.inf:
        return b
    hi = max(a, b)
    return hi + math.log1p(math.exp(-abs(a - b)))


def _build_tree(state, p, depth, direction, eps, inv_mass, logp_grad, H0, rng):
    """Grow a subtree of ``2**depth`` leapfrog steps from ``(state, p)``."""
    t = _Subtree()
    if depth == 0:
        q, p_new, lp, g, ps, kin = _leapfrog_cached(state.q, p, state.g, direction * eps, inv_mass, logp_grad)
        H = -lp + kin
        if not math.isfinite(H):
            H = math.inf
        t.n_leapfrog = 1
        t.divergent = H - H0 > MAX_DELTA_H
        t.valid = not t.divergent
        t.edge = (_State(q, lp, g), p_new)
        t.proposal = t.edge[0]
        t.log_w = H0 - H
        t.sum_accept = math.exp(min(0.0, H0 - H))
        t.rho = p_new
        t.p_beg = t.p_end = p_new
        t.ps_beg = t.ps_end = ps
        return t

    init = _build_tree(state, p, depth - 1, direction, eps, inv_mass, logp_grad, H0, rng)
    if not init.valid:
        return init
    final = _build_tree(init.edge[0], init.edge[1], depth - 1, direction, eps, inv_mass, logp_grad, H0, rng)
    t.n_leapfrog = init.n_leapfrog + final.n_leapfrog
    t.sum_accept = init.sum_accept + final.sum_accept
    t.divergent = final.divergent
    t.edge = final.edge
    if not final.valid:
        t.valid = False
        return t
    t.log_w = _logaddexp(init.log_w, final.log_w)
    # multinomial sample between the two halves
    if rng.uniform() < math.exp(min(0.0, final.log_w - t.log_w)):
        t.proposal = final.proposal
    else:
        t.proposal = init.proposal
    # halves in build order; the criterion is symmetric in the two ends
    t.rho = np.empty_like(init.rho)
    t.valid = _merge_ok(init.ps_beg, final.ps_end, init.rho, final.rho, init.ps_end, init.p_end,
                        final.ps_beg, final.p_beg, t.rho)
    t.p_beg, t.ps_beg = init.p_beg, init.ps_beg
    t.p_end, t.ps_end = final.p_end, final.ps_end
    return t


def nuts_draw(state, step_size, mass_diag, log_prob_fn=None, grad_fn=None, max_tree_depth=10, rng=None,
              logp_grad=None):
    """One NUTS transition.

    Either pass ``logp_grad`` (returning ``(log_prob, grad)``) or the pair
    ``log_prob_fn``/``grad_fn``. ``state`` is a position vector or an internal
    ``_State``. Returns ``(new_state, DrawInfo)``.
    """
    if logp_grad is None:
        if log_prob_fn is None or grad_fn is None:
            raise InvalidArgumentError("need logp_grad or both log_prob_fn and grad_fn")
        logp_grad = lambda x: (log_prob_fn(x), grad_fn(x))  # noqa: E731
    rng = rng if rng is not None else np.random.default_rng()
    if not isinstance(state, _State):
        q = np.asarray(state, dtype=float)
        lp, g = logp_grad(q)
        state = _State(q, lp, g)
    inv_mass = 1.0 / np.asarray(mass_diag, dtype=float)
    return _transition(state, step_size, inv_mass, logp_grad, max_tree_depth, rng)


def _transition(state, eps, inv_mass, logp_grad, max_depth, rng):
    p0 = rng.standard_normal(state.q.shape) / np.sqrt(inv_mass)
    H0 = -state.lp + 0.5 * float(p0 @ (inv_mass * p0))
    left = right = (state, p0)
    ps_l = ps_r = inv_mass * p0
    p_l = p_r = p0
    rho = p0.copy()
    sample = state
    log_w = 0.0
    sum_accept = 0.0
    n_leapfrog = 0
    depth = 0
    divergent = False
    while depth < max_depth:
        direction = 1 if rng.uniform() < 0.5 else -1
        start = right if direction == 1 else left
        sub = _build_tree(start[0], start[1], depth, direction, eps, inv_mass, logp_grad, H0, rng)
        n_leapfrog += sub.n_leapfrog
        sum_accept += sub.sum_accept
        if not sub.valid:
            divergent = sub.divergent
            break
        depth += 1
        if sub.log_w > log_w or rng.uniform() < math.exp(min(0.0, sub.log_w - log_w)):
            sample = sub.proposal
        log_w = _logaddexp(log_w, sub.log_w)
        if direction == 1:
            right = sub.edge
            # order: old tree (L) then subtree (R)
            ok = (_uturn_ok(ps_l, sub.ps_end, rho + sub.rho)
                  and _uturn_ok(ps_l, sub.ps_beg, rho + sub.p_beg)
                  and _uturn_ok(ps_r, sub.ps_end, sub.rho + p_r))
            ps_r, p_r = sub.ps_end, sub.p_end
        else:
            left = sub.edge
            ok = (_uturn_ok(sub.ps_end, ps_r, rho + sub.rho)
                  and _uturn_ok(sub.ps_end, ps_l, sub.rho + p_l)
                  and _uturn_ok(sub.ps_beg, ps_r, rho + sub.p_beg))
            ps_l, p_l = sub.ps_end, sub.p_end
        rho = rho + sub.rho
        if not ok:
            break
    info = DrawInfo(sum_accept / max(n_leapfrog, 1), depth, n_leapfrog, divergent)
    return sample, info


# -- adaptation --------------------------------------------------------------

class _DualAveraging:
    def __init__(self, step_size, target, gamma=0.1, t0=10.0, kappa=0.75):
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.restart(step_size)

    def restart(self, step_size):
        self.mu = math.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.t = 0

    def update(self, accept_stat) -> float:
        self.t += 1
        eta = 1.0 / (self.t + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.t) / self.gamma
        w = self.t ** -self.kappa
        self.x_bar = w * x + (1.0 - w) * self.x_bar
        return math.exp(x)

    @property
    def final(self) -> float:
        return math.exp(self.x_bar)


def _find_reasonable_step_size(state, eps, inv_mass, logp_grad, rng):
    p = rng.standard_normal(state.q.shape) / np.sqrt(inv_mass)
    H0 = -state.lp + 0.5 * float(p @ (inv_mass * p))

    def delta(e):
        _, _, lp, _, _, kin = _leapfrog_cached(state.q, p, state.g, e, inv_mass, logp_grad)
        H = -lp + kin
        return H0 - H if math.isfinite(H) else -math.inf

    d = delta(eps)
    direction = 1 if d > math.log(0.8) else -1
    for _ in range(100):
        eps = eps * (2.0 if direction == 1 else 0.5)
        d = delta(eps)
        if direction == 1 and not d > math.log(0.8):
            break
        if direction == -1 and d > math.log(0.8):
            break
        if eps < 1e-12 or eps > 1e7:
            break
    return eps


def warmup_windows(warmup: int) -> list:
    """Iteration indices (exclusive ends) at which slow metric windows close."""
    init = int(0.15 * warmup)
    term = int(0.10 * warmup)
    slow = warmup - init - term
    ends = []
    if slow < 20:
        return ends
    start, size = init, 25 if slow >= 75 else slow
    while start < init + slow:
        end = start + size
        # absorb a remainder too small for another doubled window
        if end + 2 * size > init + slow:
            end = init + slow
        ends.append(end)
        start, size = end, 2 * size
    return ends


def adapt_warmup(config: SamplerConfig, logp_grad, init_state, rng, block_of=None, callback=None):
    """Run warm-up; returns ``(state, step_size, inv_mass, n_divergent)``.

    Raises AdaptationError when more than 90% of warm-up transitions diverge.
    """
    if config.warmup < 20:
        raise InvalidArgumentError(f"warm-up needs at least 20 iterations, got {config.warmup}")
    state = init_state
    inv_mass = np.ones_like(state.q)
    eps = _find_reasonable_step_size(state, 1.0, inv_mass, logp_grad, rng)
    da = _DualAveraging(eps, config.target_accept)
    ends = warmup_windows(config.warmup)
    window_start = int(0.15 * config.warmup)
    window = []
    n_div = 0
    for it in range(config.warmup):
        state, info = _transition(state, eps, inv_mass, logp_grad, config.max_tree_depth, rng)
        n_div += info.divergent
        eps = da.update(info.accept_stat)
        if ends and window_start <= it < ends[-1]:
            window.append(state.q)
        if ends and it + 1 == ends[0]:
            ends.pop(0)
            draws = np.asarray(window)
            n = draws.shape[0]
            var = draws.var(axis=0, ddof=1) if n > 1 else np.ones_like(state.q)
            inv_mass = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            window = []
            eps = _find_reasonable_step_size(state, eps, inv_mass, logp_grad, rng)
            da.restart(eps)
        if callback is not None:
            callback(it, info, eps)
    if n_div > 0.9 * config.warmup:
        worst = int(np.argmax(np.abs(np.nan_to_num(state.g, nan=np.inf))))
        where = block_of(worst) if block_of is not None else f"coordinate {worst}"
        raise AdaptationError(f"{n_div}/{config.warmup} warm-up transitions diverged; worst block: {where}")
    return state, da.final, inv_mass, n_div


# -- chains and protocol -----------------------------------------------------

def chain_seed(master_seed: int, initialization: int, chain: int) -> tuple:
    return (int(master_seed), int(initialization), int(chain))


def _rng_for(seed: tuple):
    return np.random.default_rng(np.random.SeedSequence(seed[0], spawn_key=seed[1:]))


def run_chain(logp_grad, x0, config: SamplerConfig, seed: tuple, block_of=None):
    """Warm-up plus sampling for a single chain from ``x0``."""
    t_start = time.perf_counter()
    rng = _rng_for(seed)
    q = np.asarray(x0, dtype=float).copy()
    lp, g = logp_grad(q)
    if not np.isfinite(lp):
        raise AdaptationError(f"initial point has non-finite log density (seed {seed})")
    state = _State(q, lp, g)
    state, eps, inv_mass, n_warm_div = adapt_warmup(config, logp_grad, state, rng, block_of=block_of)
    n = config.retained
    draws = np.empty((n, q.size))
    lps = np.empty(n)
    acc = np.empty(n)
    depth = np.empty(n, dtype=int)
    nleap = np.empty(n, dtype=int)
    div = np.zeros(n, dtype=bool)
    for i in range(n):
        state, info = _transition(state, eps, inv_mass, logp_grad, config.max_tree_depth, rng)
        draws[i] = state.q
        lps[i] = state.lp
        acc[i] = info.accept_stat
        depth[i] = info.tree_depth
        nleap[i] = info.n_leapfrog
        div[i] = info.divergent
    return ChainResult(draws, lps, acc, depth, nleap, div, eps, inv_mass, seed, n_warm_div,
                       time.perf_counter() - t_start)


def initial_point(size: int, config: SamplerConfig, seed: tuple) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence(seed[0], spawn_key=(*seed[1:], 2**20)))
    return rng.uniform(-config.init_jitter, config.init_jitter, size)


def _chain_job(args):
    model, x0, config, seed, x0_reported = args
    block_of = model.layout.block_of if hasattr(model, "layout") else None
    if x0_reported and hasattr(model, "from_centered"):
        x0 = model.from_centered(x0)
    res = run_chain(model.log_prob_and_grad, x0, config, seed, block_of=block_of)
    if hasattr(model, "to_centered") and getattr(model, "noncentered", False):
        # report draws, and score them, in the model's own coordinates
        res.draws = model.to_centered(res.draws)
        res.log_prob = np.array([model.centered_log_prob(d) for d in res.draws])
    return res


def run_chains(model, config: SamplerConfig, inits: Optional[Sequence] = None, progress=None) -> PosteriorDraws:
    """Full protocol: ``config.initializations`` random restarts of ``config.chains`` chains each.

    ``model`` exposes ``log_prob_and_grad`` and ``size``. If it samples in
    auxiliary coordinates it also sets ``noncentered`` and provides
    ``to_centered``, ``from_centered`` and ``centered_log_prob``; draws and
    scores are then reported in centred coordinates. ``inits`` optionally
    fixes the starting vector of each initialization (shared by its chains),
    given in centred coordinates.
    Each initialization is scored by the mean retained log joint across its
    chains; the draws of the best one are returned.
    """
    best, scores, failed = None, [], {}
    for r in range(config.initializations):
        jobs = []
        for c in range(config.chains):
            seed = chain_seed(config.seed, r, c)
            if inits is not None:
                jobs.append((model, np.asarray(inits[r], dtype=float), config, seed, True))
            else:
                jobs.append((model, initial_point(model.size, config, seed), config, seed, False))
        try:
            if config.n_jobs > 1:
                with ProcessPoolExecutor(max_workers=config.n_jobs) as ex:
                    chains = list(ex.map(_chain_job, jobs))
            else:
                chains = [_chain_job(j) for j in jobs]
        except AdaptationError as exc:
            log.warning("initialization %d failed: %s", r, exc)
            failed[r] = str(exc)
            scores.append(float("-inf"))
            continue
        score = float(np.mean([c.log_prob.mean() for c in chains]))
        scores.append(score)
        log.info("initialization %d: mean log joint %.3f, divergences %s, step sizes %s", r, score,
                 [int(c.divergent.sum()) for c in chains], [round(c.step_size, 5) for c in chains])
        if progress is not None:
            progress(r, score, chains)
        if best is None or score > best[0]:
            best = (score, r, chains)
    if best is None:
        raise RunFailureError(f"all {config.initializations} initializations failed: {failed}")
    return PosteriorDraws(best[2], best[1], scores, failed)


# -- diagnostics -------------------------------------------------------------

def _rank_normalize(x):
    """Rank-normalise ``(chains, draws, P)`` jointly over chains and draws."""
    c, n, p = x.shape
    flat = x.reshape(c * n, p)
    ranks = stats.rankdata(flat, axis=0)
    z = stats.norm.ppf((ranks - 0.375) / (c * n + 0.25))
    return z.reshape(c, n, p)


def _split(x):
    c, n, p = x.shape
    half = n // 2
    return np.concatenate([x[:, :half], x[:, n - half:]], axis=0)


def _rhat(x):
    m, n, _ = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_hat = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(var_hat / W)


def _ess(x):
    """Geyer initial-monotone-sequence ESS for ``(chains, draws, P)``."""
    m, n, p = x.shape
    centered = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n] / n
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean(axis=0)
    mean_var = W * (n - 1) / n
    var_plus = mean_var + (x.mean(axis=1).var(axis=0, ddof=1) if m > 1 else 0.0)
    ess = np.empty(p)
    for j in range(p):
        if var_plus[j] <= 0:
            ess[j] = np.nan
            continue
        rho_hat = 1.0 - (mean_var[j] - acov[:, :, j].mean(axis=0)) / var_plus[j]
        rho_hat[0] = 1.0
        total, prev_pair = 0.0, np.inf
        t = 0
        while t + 1 < n:
            pair = rho_hat[t] + rho_hat[t + 1]
            if pair < 0:
                break
            pair = min(pair, prev_pair)
            total += pair
            prev_pair = pair
            t += 2
        tau = -1.0 + 2.0 * total
        ess[j] = m * n / max(tau, 1.0 / np.log10(m * n))
    return ess


def diagnostics(draws) -> ChainDiagnostics:
    """Rank-normalised split R-hat and bulk ESS per coordinate."""
    if isinstance(draws, PosteriorDraws):
        x = draws.stacked()
        divs = draws.divergences()
    else:
        x = np.asarray(draws, dtype=float)
        if x.ndim == 2:
            x = x[:, :, None]
        divs = [0] * x.shape[0]
    if x.shape[0] < 2 or x.shape[1] < 4:
        raise InvalidArgumentError(f"diagnostics need >= 2 chains and >= 4 draws, got shape {x.shape[:2]}")
    degenerate = np.all(x == x[:1, :1, :], axis=(0, 1))
    z = _split(_rank_normalize(x))
    with np.errstate(invalid="ignore", divide="ignore"):
        rhat = _rhat(z)
        ess = _ess(z)
    within_zero = np.isclose(z.var(axis=1, ddof=1).mean(axis=0), 0.0)
    separated = within_zero & ~degenerate
    rhat = np.where(degenerate, 1.0, rhat)
    rhat = np.where(separated | ~np.isfinite(rhat), RHAT_CAP, rhat)
    total = x.shape[0] * x.shape[1]
    ess = np.where(degenerate | ~np.isfinite(ess), 1.0, np.clip(ess, 1.0, total))
    return ChainDiagnostics(rhat, ess, divs, degenerate, separated)
