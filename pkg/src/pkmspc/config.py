"""Run configuration: flat ``key = value`` files plus command-line overrides.

Keys (hyphens and underscores are interchangeable)::

    healthy          healthy training CSV (required)
    monitor          monitored CSV; optional ``label``/``time`` columns (default: healthy)
    calibration      labelled CSV for the gpc/kpcr routes (default: monitor)
    out              output directory (default: out)
    seed             master seed (default 0)
    kernel           se | ard
    route            gpc | kpcr | unsupervised:M1 ... unsupervised:M10
    likelihood       gpc | kpcr, likelihood used with pseudo-labels on the unsupervised route
    optimizer        lbfgs | nelder-mead | ga | kf
    optimizer_iters  iteration budget (default per optimizer)
    sampler          am | dram | hmc | nuts
    draws            chain length (default 5000 for am/dram, 1000 for hmc/nuts)
    burn_in          discarded fraction (default 0.4 for am/dram, 0.2 for hmc/nuts)
    prior_sd         one value, or one per log-parameter separated by commas (default 0.5)
    proposal_scale   initial random-walk sd for am/dram (default 0.1)
    step_size        leapfrog step for hmc/nuts before warm-up (default 0.1)
    n_leapfrog       hmc trajectory length (default 10)
    max_tree_depth   nuts depth cap (default 10)
    components       retained components: integer count or variance fraction (default 0.95)
    kpcr_components  component count for the K-PCR likelihood (default: from ``components``)
    confidence       control-limit quantile (default 0.99)
    credible         credible-band alpha (default 0.05)
    workers          propagation threads (default 1)
    delimiter        CSV delimiter (default ,)
    contrib_time     monitored row index to diagnose (default: first alarm + offset)
    contrib_offset   rows after the first alarm (default 0)
    auc_chart        t2 | spe | max (default max)
    plots            true | false (default true)
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .bayes import Sampler
from .calibration import Method
from .errors import InputError
from .kpca import ComponentPolicy
from .unsupervised import MethodId


class ConfigError(InputError):
    """A configuration key is unknown, malformed or inconsistent with another key."""

    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


def _bool(text):
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        if text is None or str(text).strip().lower() in ("", "none"):
            return None
        return conv(text)
    return parse


def _floats(text):
    return tuple(float(v) for v in str(text).split(","))


@dataclass(frozen=True)
class RunConfig:
    healthy: str | None = None
    monitor: str | None = None
    calibration: str | None = None
    out: str = "out"
    seed: int = 0
    kernel: str = "se"
    route: str = "gpc"
    likelihood: str = "gpc"
    optimizer: str = "lbfgs"
    optimizer_iters: int | None = None
    sampler: str = "dram"
    draws: int | None = None
    burn_in: float | None = None
    prior_sd: tuple = (0.5,)
    proposal_scale: float = 0.1
    step_size: float = 0.1
    n_leapfrog: int = 10
    max_tree_depth: int = 10
    components: str = "0.95"
    kpcr_components: int | None = None
    confidence: float = 0.99
    credible: float = 0.05
    workers: int = 1
    delimiter: str = ","
    contrib_time: int | None = None
    contrib_offset: int = 0
    auc_chart: str = "max"
    plots: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def unsupervised_method(self) -> MethodId | None:
        if not self.route.startswith("unsupervised:"):
            return None
        return MethodId(self.route.split(":", 1)[1].upper())

    @property
    def r_policy(self) -> ComponentPolicy:
        return ComponentPolicy.parse(self.components)

    def validate(self):
        if self.kernel not in ("se", "ard"):
            raise ConfigError("kernel", f"expected se or ard, got {self.kernel!r}")
        if self.route.startswith("unsupervised:"):
            try:
                self.unsupervised_method
            except ValueError:
                raise ConfigError("route", f"unknown unsupervised rule in {self.route!r}") from None
            if self.kernel == "ard":
                raise ConfigError("kernel", "the unsupervised route selects a single lengthscale; use kernel=se")
        elif self.route not in ("gpc", "kpcr"):
            raise ConfigError("route", f"expected gpc, kpcr or unsupervised:<M1..M10>, got {self.route!r}")
        if self.likelihood not in ("gpc", "kpcr"):
            raise ConfigError("likelihood", f"expected gpc or kpcr, got {self.likelihood!r}")
        for key, enum in (("optimizer", Method), ("sampler", Sampler)):
            try:
                enum(getattr(self, key))
            except ValueError:
                raise ConfigError(key, f"unsupported value {getattr(self, key)!r}") from None
        if self.draws is not None and self.draws < 1:
            raise ConfigError("draws", "must be at least 1")
        if self.burn_in is not None and not 0 <= self.burn_in < 1:
            raise ConfigError("burn_in", "must be a fraction in [0, 1)")
        if not 0 < self.confidence < 1:
            raise ConfigError("confidence", "must lie in (0, 1)")
        if not 0 < self.credible < 1:
            raise ConfigError("credible", "must lie in (0, 1)")
        if any(s <= 0 for s in self.prior_sd):
            raise ConfigError("prior_sd", "must be positive")
        if self.workers < 1:
            raise ConfigError("workers", "must be at least 1")
        if self.auc_chart not in ("t2", "spe", "max"):
            raise ConfigError("auc_chart", "expected t2, spe or max")
        try:
            self.r_policy
        except ValueError as exc:
            raise ConfigError("components", str(exc)) from None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["prior_sd"] = list(self.prior_sd)
        return d


_CONVERTERS = {
    "healthy": _opt(str), "monitor": _opt(str), "calibration": _opt(str), "out": str,
    "seed": int, "kernel": str.lower, "route": str, "likelihood": str.lower,
    "optimizer": str.lower, "optimizer_iters": _opt(int), "sampler": str.lower,
    "draws": _opt(int), "burn_in": _opt(float), "prior_sd": _floats,
    "proposal_scale": float, "step_size": float, "n_leapfrog": int, "max_tree_depth": int,
    "components": str, "kpcr_components": _opt(int), "confidence": float, "credible": float,
    "workers": int, "delimiter": str, "contrib_time": _opt(int), "contrib_offset": int,
    "auc_chart": str.lower, "plots": _bool,
}

KEYS = tuple(_CONVERTERS)


def _normalize(key: str) -> str:
    return key.strip().replace("-", "_").lower()


def parse_values(raw: dict) -> dict:
    """Convert string values to typed fields; unknown keys raise :class:`ConfigError`."""
    out = {}
    for key, value in raw.items():
        k = _normalize(key)
        if k not in _CONVERTERS:
            raise ConfigError(k, "unknown key")
        try:
            out[k] = value if not isinstance(value, str) else _CONVERTERS[k](value.strip())
        except ValueError as exc:
            raise ConfigError(k, f"cannot parse {value!r}: {exc}") from None
    return out


def read_config_file(path) -> dict:
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(text, f"line {lineno} is not key = value")
        key, value = text.split("=", 1)
        raw[_normalize(key)] = value.strip()
    return parse_values(raw)


def load_config(path=None, **overrides) -> RunConfig:
    """File values first, then non-None overrides; paths in the file resolve against its folder."""
    values = {}
    if path is not None:
        values = read_config_file(path)
        base = Path(path).resolve().parent
        for key in ("healthy", "monitor", "calibration", "out"):
            if values.get(key) is not None and not Path(values[key]).is_absolute():
                values[key] = str(base / values[key])
    values.update(parse_values({k: v for k, v in overrides.items() if v is not None}))
    return RunConfig(**values)
