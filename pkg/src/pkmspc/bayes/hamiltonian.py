"""Hamiltonian Monte Carlo and the No-U-Turn sampler (slice variant).

Both use a diagonal mass matrix and either the target's ``grad`` method or
central finite differences. A trajectory that meets a non-finite density or
gradient is rejected; the chain carries on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InputError
from .chain import Chain, Sampler, default_burn_in
from .posterior import value_and_grad

WARMUP_ITERS = 100


@dataclass(frozen=True)
class HmcConfig:
    n_draws: int = 1000
    step_size: float = 0.1
    n_leapfrog: int = 10
    mass_diag: tuple | None = None
    seed: int = 0
    burn_in: int | None = None
    warmup: bool = False
    target_accept: float = 0.65

    def __post_init__(self):
        if self.n_draws < 1 or self.step_size <= 0 or self.n_leapfrog < 0:
            raise InputError("HMC needs n_draws >= 1, step_size > 0, n_leapfrog >= 0")


@dataclass(frozen=True)
class NutsConfig:
    n_draws: int = 1000
    step_size: float = 0.1
    max_tree_depth: int = 10
    max_energy_error: float = 1000.0
    mass_diag: tuple | None = None
    seed: int = 0
    burn_in: int | None = None
    warmup: bool = False
    target_accept: float = 0.8

    def __post_init__(self):
        if self.n_draws < 1 or self.step_size <= 0 or self.max_tree_depth < 0:
            raise InputError("NUTS needs n_draws >= 1, step_size > 0, max_tree_depth >= 0")


class _State:
    __slots__ = ("x", "logp", "grad")

    def __init__(self, x, logp, grad):
        self.x, self.logp, self.grad = x, logp, grad

    @property
    def ok(self) -> bool:
        return math.isfinite(self.logp) and bool(np.all(np.isfinite(self.grad)))


def _evaluate(target, x) -> _State:
    try:
        lp, g = value_and_grad(target, x)
    except (ArithmeticError, ValueError, np.linalg.LinAlgError):
        return _State(x, -math.inf, np.full(x.shape, np.nan))
    if not math.isfinite(lp):
        g = np.full(x.shape, np.nan)
    return _State(x, lp, g)


def leapfrog(target, state: _State, p, step, n_steps, inv_mass):
    """Integrate Hamilton's equations; returns the end state and momentum.

    Stops early, returning a non-finite state, if the density or gradient
    stops being finite along the way.
    """
    p = p + 0.5 * step * state.grad
    for s in range(n_steps):
        x = state.x + step * inv_mass * p
        state = _evaluate(target, x)
        if not state.ok:
            return state, p
        if s < n_steps - 1:
            p = p + step * state.grad
    return state, p + 0.5 * step * state.grad


def hamiltonian(state: _State, p, inv_mass) -> float:
    """Total energy: negative log density plus Gaussian kinetic energy."""
    if not state.ok:
        return math.inf
    return -state.logp + 0.5 * float(p @ (inv_mass * p))


def _mass(cfg, m):
    mass = np.ones(m) if cfg.mass_diag is None else np.asarray(cfg.mass_diag, dtype=float)
    if mass.shape != (m,) or np.any(mass <= 0):
        raise InputError("mass_diag must be a positive vector of the parameter dimension")
    return mass


def _start(target, init):
    x = np.array(init, dtype=float, copy=True).ravel()
    state = _evaluate(target, x)
    if not math.isfinite(state.logp):
        raise InputError("log-posterior at the initial point is not finite")
    return state


def _hmc_step(target, state, step, n_leapfrog, mass, inv_mass, rng):
    p0 = np.sqrt(mass) * rng.standard_normal(state.x.size)
    u = rng.random()
    if n_leapfrog == 0:
        return state, 1.0
    new, p1 = leapfrog(target, state, p0, step, n_leapfrog, inv_mass)
    dH = hamiltonian(new, p1, inv_mass) - hamiltonian(state, p0, inv_mass)
    accept_prob = math.exp(min(0.0, -dH)) if math.isfinite(dH) else 0.0
    return (new if u < accept_prob else state), accept_prob


def _warm_step(step, accept_stat, target_accept):
    return step * (1.1 if accept_stat > target_accept else 1 / 1.1)


def sample_hmc(target, init, config: HmcConfig = HmcConfig()) -> Chain:
    """Fixed-length HMC with a Metropolis correction on the energy error.

    With ``config.warmup`` the step size is crudely tuned over 100 discarded
    iterations (multiply by 1.1 when the acceptance probability beats
    ``target_accept``, divide otherwise); sampling then restarts at ``init``.
    """
    state0 = _start(target, init)
    m = state0.x.size
    mass = _mass(config, m)
    inv_mass = 1.0 / mass
    rng = np.random.default_rng(config.seed)
    step = config.step_size
    if config.warmup and config.n_leapfrog > 0:
        s = state0
        for _ in range(WARMUP_ITERS):
            s, a = _hmc_step(target, s, step, config.n_leapfrog, mass, inv_mass, rng)
            step = _warm_step(step, a, config.target_accept)
    M = config.n_draws
    draws, logp = np.empty((M, m)), np.empty(M)
    state = state0
    draws[0], logp[0] = state.x, state.logp
    accepted = 0
    for i in range(1, M):
        new, _ = _hmc_step(target, state, step, config.n_leapfrog, mass, inv_mass, rng)
        accepted += new is not state or config.n_leapfrog == 0
        state = new
        draws[i], logp[i] = state.x, state.logp
    burn = config.burn_in if config.burn_in is not None else default_burn_in(Sampler.HMC, M)
    names = tuple(getattr(target, "param_names", ()) or ())
    return Chain(draws, logp, accepted / max(M - 1, 1), Sampler.HMC, config.seed, burn, names,
                 {"step_size": step})


def no_u_turn(x_minus, x_plus, p_minus, p_plus, inv_mass=None) -> bool:
    """True while neither end of the trajectory has started moving back toward the other."""
    dx = np.asarray(x_plus, dtype=float) - np.asarray(x_minus, dtype=float)
    vm = np.asarray(p_minus, dtype=float)
    vp = np.asarray(p_plus, dtype=float)
    if inv_mass is not None:
        vm, vp = inv_mass * vm, inv_mass * vp
    return bool(dx @ vm >= 0 and dx @ vp >= 0)


@dataclass
class _Tree:
    minus: _State
    p_minus: np.ndarray
    plus: _State
    p_plus: np.ndarray
    proposal: _State
    n_valid: int
    keep_going: bool
    alpha_sum: float
    n_alpha: int


class _Nuts:
    def __init__(self, target, step, mass, max_depth, max_dH, rng):
        self.target, self.step, self.rng = target, step, rng
        self.mass, self.inv_mass = mass, 1.0 / mass
        self.max_depth, self.max_dH = max_depth, max_dH
        self.divergences = 0

    def _leaf(self, state, p, direction, log_u, h0) -> _Tree:
        new, p1 = leapfrog(self.target, state, p, direction * self.step, 1, self.inv_mass)
        joint = -hamiltonian(new, p1, self.inv_mass)
        n_valid = int(log_u <= joint)
        keep = log_u < joint + self.max_dH
        if not keep:
            self.divergences += 1
        alpha = math.exp(min(0.0, joint + h0)) if joint > -math.inf else 0.0
        return _Tree(new, p1, new, p1, new, n_valid, keep, alpha, 1)

    def build(self, state, p, direction, depth, log_u, h0) -> _Tree:
        if depth == 0:
            return self._leaf(state, p, direction, log_u, h0)
        t = self.build(state, p, direction, depth - 1, log_u, h0)
        if not t.keep_going:
            return t
        if direction < 0:
            t2 = self.build(t.minus, t.p_minus, direction, depth - 1, log_u, h0)
            t.minus, t.p_minus = t2.minus, t2.p_minus
        else:
            t2 = self.build(t.plus, t.p_plus, direction, depth - 1, log_u, h0)
            t.plus, t.p_plus = t2.plus, t2.p_plus
        total = t.n_valid + t2.n_valid
        if total > 0 and self.rng.random() < t2.n_valid / total:
            t.proposal = t2.proposal
        t.alpha_sum += t2.alpha_sum
        t.n_alpha += t2.n_alpha
        t.keep_going = t2.keep_going and no_u_turn(
            t.minus.x, t.plus.x, t.p_minus, t.p_plus, self.inv_mass)
        t.n_valid = total
        return t

    def transition(self, state: _State):
        p0 = np.sqrt(self.mass) * self.rng.standard_normal(state.x.size)
        h0 = hamiltonian(state, p0, self.inv_mass)
        log_u = -h0 - self.rng.exponential()
        minus = plus = state
        p_minus = p_plus = p0
        proposal, n_valid, keep = state, 1, True
        alpha_sum, n_alpha, depth = 0.0, 0, 0
        while keep and depth <= self.max_depth:
            direction = 1 if self.rng.random() < 0.5 else -1
            if direction < 0:
                t = self.build(minus, p_minus, -1, depth, log_u, h0)
                minus, p_minus = t.minus, t.p_minus
            else:
                t = self.build(plus, p_plus, 1, depth, log_u, h0)
                plus, p_plus = t.plus, t.p_plus
            if t.keep_going and self.rng.random() < t.n_valid / n_valid:
                proposal = t.proposal
            n_valid += t.n_valid
            alpha_sum += t.alpha_sum
            n_alpha += t.n_alpha
            keep = t.keep_going and no_u_turn(minus.x, plus.x, p_minus, p_plus, self.inv_mass)
            depth += 1
        return proposal, alpha_sum / max(n_alpha, 1), depth


def sample_nuts(target, init, config: NutsConfig = NutsConfig()) -> Chain:
    """No-U-Turn sampler with slice selection and recursive doubling.

    Depth ``j`` adds ``2**j`` leapfrog steps, so ``max_tree_depth=0`` gives a
    single-step proposal. Doubling stops on a U-turn, on an energy error above
    ``max_energy_error``, or at the depth cap. ``acceptance_rate`` is the mean
    of the per-iteration average acceptance statistic over the built trees.
    """
    state = _start(target, init)
    m = state.x.size
    mass = _mass(config, m)
    rng = np.random.default_rng(config.seed)
    step = config.step_size
    if config.warmup:
        s = state
        for _ in range(WARMUP_ITERS):
            nuts = _Nuts(target, step, mass, config.max_tree_depth, config.max_energy_error, rng)
            s, a, _ = nuts.transition(s)
            step = _warm_step(step, a, config.target_accept)
    nuts = _Nuts(target, step, mass, config.max_tree_depth, config.max_energy_error, rng)
    M = config.n_draws
    draws, logp = np.empty((M, m)), np.empty(M)
    draws[0], logp[0] = state.x, state.logp
    stats, depths = [], []
    for i in range(1, M):
        state, a, d = nuts.transition(state)
        stats.append(a)
        depths.append(d)
        draws[i], logp[i] = state.x, state.logp
    burn = config.burn_in if config.burn_in is not None else default_burn_in(Sampler.NUTS, M)
    names = tuple(getattr(target, "param_names", ()) or ())
    return Chain(draws, logp, float(np.mean(stats)) if stats else 0.0, Sampler.NUTS, config.seed,
                 burn, names, {"step_size": step, "divergences": nuts.divergences,
                               "mean_tree_depth": float(np.mean(depths)) if depths else 0.0})
