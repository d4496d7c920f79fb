"""Posterior sampling of log-kernel-parameters."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from .chain import DEFAULT_DRAWS, Chain, Sampler, default_burn_in
from .diagnostics import Diagnostics, EssReport, autocorrelation, diagnostics, ess
from .hamiltonian import HmcConfig, NutsConfig, leapfrog, no_u_turn, sample_hmc, sample_nuts
from .metropolis import MetropolisConfig, sample_am, sample_dram
from .posterior import DEFAULT_PRIOR_SD, GaussianTarget, LogPosterior, PriorSpec, log_posterior

_SAMPLERS = {
    Sampler.AM: (sample_am, MetropolisConfig),
    Sampler.DRAM: (sample_dram, MetropolisConfig),
    Sampler.HMC: (sample_hmc, HmcConfig),
    Sampler.NUTS: (sample_nuts, NutsConfig),
}


def default_config(sampler, **overrides):
    """Sampler config with the per-sampler default draw count, overridable."""
    sampler = Sampler(sampler)
    fields = {"n_draws": DEFAULT_DRAWS[sampler]}
    fields.update({k: v for k, v in overrides.items() if v is not None})
    return _SAMPLERS[sampler][1](**fields)


def sample(sampler, target, init, config=None) -> Chain:
    sampler = Sampler(sampler)
    fn, cfg_type = _SAMPLERS[sampler]
    return fn(target, init, config if config is not None else default_config(sampler))


def sample_chains(sampler, target, init, config, n_chains, workers=1) -> list[Chain]:
    """Independent chains with seeds spawned from ``config.seed``; order follows chain index."""
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(config.seed).spawn(n_chains)]
    configs = [replace(config, seed=s) for s in seeds]
    if workers <= 1:
        return [sample(sampler, target, init, c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda c: sample(sampler, target, init, c), configs))


__all__ = [
    "Chain", "Sampler", "default_burn_in", "EssReport", "Diagnostics", "ess", "diagnostics",
    "autocorrelation", "HmcConfig", "NutsConfig", "MetropolisConfig", "sample_am", "sample_dram",
    "sample_hmc", "sample_nuts", "no_u_turn", "leapfrog", "LogPosterior", "PriorSpec",
    "GaussianTarget", "log_posterior", "DEFAULT_PRIOR_SD", "sample", "sample_chains",
    "default_config",
]
