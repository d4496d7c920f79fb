"""Container for MCMC output and its CSV export."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import InputError


class Sampler(str, enum.Enum):
    AM = "am"
    DRAM = "dram"
    HMC = "hmc"
    NUTS = "nuts"


DEFAULT_DRAWS = {Sampler.AM: 5000, Sampler.DRAM: 5000, Sampler.HMC: 1000, Sampler.NUTS: 1000}
DEFAULT_BURN_FRACTION = {Sampler.AM: 0.4, Sampler.DRAM: 0.4, Sampler.HMC: 0.2, Sampler.NUTS: 0.2}


def default_burn_in(sampler, n_draws: int) -> int:
    return int(DEFAULT_BURN_FRACTION[Sampler(sampler)] * n_draws)


@dataclass
class Chain:
    draws: np.ndarray
    log_post: np.ndarray
    acceptance_rate: float
    sampler: Sampler
    seed: int
    burn_in: int = 0
    param_names: tuple = ()
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.log_post = np.asarray(self.log_post, dtype=float)
        self.sampler = Sampler(self.sampler)
        M = self.draws.shape[0]
        if self.log_post.shape != (M,):
            raise InputError("log_post must have one entry per draw")
        if not 0 <= self.burn_in < max(M, 1):
            raise InputError(f"burn_in {self.burn_in} must be below the chain length {M}")
        if not self.param_names:
            self.param_names = tuple(f"theta_{j}" for j in range(self.draws.shape[1]))

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def kept(self) -> np.ndarray:
        return self.draws[self.burn_in:]

    def with_burn_in(self, burn_in: int) -> Chain:
        return Chain(self.draws, self.log_post, self.acceptance_rate, self.sampler,
                     self.seed, burn_in, self.param_names, dict(self.info))

    def write_csv(self, path) -> None:
        """One column per log-parameter plus ``log_post``, one row per draw in order."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*self.param_names, "log_post"])
            for row, lp in zip(self.draws, self.log_post):
                w.writerow([_fmt(v) for v in row] + [_fmt(lp)])

    @classmethod
    def read_csv(cls, path, sampler="am", seed=0, burn_in=0, acceptance_rate=float("nan")) -> Chain:
        with open(Path(path), newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        if header[-1] != "log_post":
            raise InputError(f"{path}: last column must be log_post")
        body = body.reshape(-1, len(header))
        return cls(body[:, :-1], body[:, -1], acceptance_rate, sampler, seed, burn_in, tuple(header[:-1]))


def _fmt(v: float) -> str:
    return "%.17g" % v
