"""Small nonlinear process benchmark with an injected mean-shift fault.

Ten measured variables are nonlinear functions of two latent drivers plus
sensor noise. The monitored run is in control for ``fault_start`` samples and
then carries a step change in the mean of a subset of variables.
"""

from __future__ import annotations

import numpy as np

from .data import Dataset

NAMES = tuple(f"x{j + 1}" for j in range(10))


def _process(z: np.ndarray) -> np.ndarray:
    z1, z2 = z[:, 0], z[:, 1]
    return np.column_stack([
        z1,
        z2,
        z1**2,
        z1 * z2,
        np.sin(z1),
        np.cos(z2),
        z1 + z2**2,
        np.exp(0.5 * z1),
        np.tanh(z2),
        z1 - z2,
    ])


def generate(n, rng, noise_sd=0.1) -> np.ndarray:
    z = rng.standard_normal((n, 2))
    return _process(z) + noise_sd * rng.standard_normal((n, 10))


def benchmark(seed=2024, n_healthy=200, n_monitor=200, fault_start=100,
              shift=(3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0), noise_sd=0.1):
    """Healthy training set and a labelled monitored run.

    The default fault is a +3 bias on the x1 sensor (about three healthy
    standard deviations), which breaks its coupling to x3, x5, x7, x8 and x10.
    """
    rng = np.random.default_rng(seed)
    healthy = generate(n_healthy, rng, noise_sd)
    run = generate(n_monitor, rng, noise_sd)
    labels = np.zeros(n_monitor, dtype=int)
    labels[fault_start:] = 1
    run[fault_start:] += np.asarray(shift, dtype=float)
    time = np.arange(n_monitor, dtype=float)
    return (Dataset(healthy, NAMES, None, np.arange(n_healthy, dtype=float)),
            Dataset(run, NAMES, labels, time))
