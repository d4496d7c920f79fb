"""End-to-end workflow: calibrate, sample, propagate, summarize, evaluate, export.

Each stage reads and writes plain files in the output directory, so stages
can be rerun on their own. File layout (all floats written with 17
significant digits)::

    theta_hat.txt                    name value, one log-parameter per line
    pseudo_labels.csv                time,label (unsupervised route)
    chain.csv                        one column per log-parameter, then log_post
    chart_{t2,spe}.csv               probabilistic chart
    chart_{t2,spe}_deterministic.csv chart at theta_hat (prior mean), same columns
    chart_{t2,spe}_posterior_mean.csv chart at the posterior mean, same columns
    contrib_{t2,spe}.csv             time,variable,mean,lower,upper ranked by |mean|
    metrics.csv                      key,value
    manifest.json                    resolved config, inputs, estimates, counts
    timings.json                     wall time per stage (not reproducible by nature)
    *.svg                            plots of the chart and contribution files
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import (
    Chain,
    HmcConfig,
    LogPosterior,
    MetropolisConfig,
    NutsConfig,
    PriorSpec,
    Sampler,
    diagnostics,
    ess,
    sample,
)
from .bayes.chain import DEFAULT_BURN_FRACTION, DEFAULT_DRAWS
from .calibration import CalibrationObjective, OptimizerConfig, calibrate
from .config import RunConfig
from .data import Dataset, fit_scaler, load_dataset
from .errors import InputError, PkmspcError, StageError
from .kernels import KernelParams, KernelSpec
from .kpca import control_limits, fit_kpca, monitor
from .metrics import evaluate_charts
from .propagation import (
    DeterministicChart,
    ProbabilisticChart,
    chart_from_deterministic,
    default_contribution_time,
    deterministic_chart,
    posterior_mean_chart,
    propagate,
    summarize_chart,
    summarize_contributions,
)
from .unsupervised import (
    NOISE_SD,
    SIGNAL_SD,
    UnsupervisedMethod,
    assign_pseudo_labels,
    median_pairwise_distance,
    tune_unsupervised,
)

logger = logging.getLogger(__name__)

KINDS = ("t2", "spe")


def _fmt(v) -> str:
    return "%.17g" % v


# ---------------------------------------------------------------- inputs


@dataclass(frozen=True)
class Inputs:
    healthy: Dataset
    monitor: Dataset
    calibration: Dataset | None
    Xh: np.ndarray
    Xm: np.ndarray
    Xc: np.ndarray | None
    spec: KernelSpec


def load_inputs(cfg: RunConfig) -> Inputs:
    """Read the CSVs and autoscale everything with the healthy-data scaler."""
    if cfg.healthy is None:
        raise InputError("config key 'healthy' is required")
    healthy = load_dataset(cfg.healthy, cfg.delimiter)
    monitor_ds = load_dataset(cfg.monitor, cfg.delimiter) if cfg.monitor else healthy
    calib = None
    if cfg.calibration:
        calib = load_dataset(cfg.calibration, cfg.delimiter, require_labels=cfg.unsupervised_method is None)
    elif cfg.unsupervised_method is None:
        calib = monitor_ds if monitor_ds.labels is not None else None
    else:
        calib = monitor_ds
    for ds, name in ((monitor_ds, "monitor"), (calib, "calibration")):
        if ds is not None and ds.names != healthy.names:
            raise InputError(f"{name} columns {ds.names} differ from healthy columns {healthy.names}")
    scaler = fit_scaler(healthy)
    spec = KernelSpec(cfg.kernel, healthy.p)
    return Inputs(healthy, monitor_ds, calib, scaler.apply(healthy.X), scaler.apply(monitor_ds.X),
                  None if calib is None else scaler.apply(calib.X), spec)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------- theta_hat


def write_theta(path, spec: KernelSpec, theta) -> None:
    lines = [f"{n} {_fmt(v)}" for n, v in zip(spec.param_names(), np.asarray(theta, dtype=float))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_theta(path, spec: KernelSpec) -> np.ndarray:
    pairs = [ln.split() for ln in Path(path).read_text().splitlines() if ln.strip()]
    names = [p[0] for p in pairs]
    if names != spec.param_names():
        raise InputError(f"{path}: parameters {names} do not match kernel {spec.param_names()}")
    return np.array([float(p[1]) for p in pairs])


def _kpcr_r(cfg, spec, X, theta):
    if cfg.kpcr_components is not None:
        return cfg.kpcr_components
    model = fit_kpca(X, spec, KernelParams.from_vector(theta, spec.n_lengthscales), cfg.r_policy)
    return model.r


def _init_theta(spec, X):
    ell = median_pairwise_distance(X)
    return KernelParams.from_natural(np.full(spec.n_lengthscales, ell), 1.0, 0.1).to_vector()


def supervised_objective(cfg: RunConfig, inp: Inputs, theta_ref) -> CalibrationObjective:
    if inp.calibration is None or inp.calibration.labels is None:
        raise InputError("the gpc/kpcr routes need labelled calibration data (a 'label' column)")
    r = _kpcr_r(cfg, inp.spec, inp.Xc, theta_ref) if cfg.route == "kpcr" else None
    return CalibrationObjective(cfg.route, inp.spec, inp.Xc, inp.calibration.labels, r)


def stage_calibrate(cfg: RunConfig, inp: Inputs):
    """Deterministic calibration on labelled data; returns (theta_hat, info)."""
    init = _init_theta(inp.spec, inp.Xc if inp.Xc is not None else inp.Xh)
    obj = supervised_objective(cfg, inp, init)
    res = calibrate(obj, OptimizerConfig(method=cfg.optimizer, max_iters=cfg.optimizer_iters, seed=cfg.seed), init)
    info = {"method": cfg.optimizer, "objective_value": res.objective_value, "converged": res.converged,
            "n_evaluations": res.n_evaluations, "kpcr_components": obj.r}
    return res.theta_vector, info, res.wall_time


def stage_tune(cfg: RunConfig, inp: Inputs):
    """Unsupervised lengthscale and chart-induced pseudo-labels on the calibration rows."""
    method = UnsupervisedMethod(cfg.unsupervised_method, seed=cfg.seed)
    tuned = tune_unsupervised(method, inp.Xh)
    theta = tuned.params().to_vector()
    params = tuned.params()
    model = fit_kpca(inp.Xh, inp.spec, params, cfg.r_policy)
    limits = control_limits(monitor(model, inp.Xh), cfg.confidence)
    labels = assign_pseudo_labels(model, limits, inp.Xc).labels
    info = {"method": tuned.method.value, "lengthscale": tuned.lengthscale,
            "signal_sd": SIGNAL_SD, "noise_sd": NOISE_SD, "pseudo_alarm_fraction": float(labels.mean())}
    return theta, labels, info


def write_pseudo_labels(path, time_index, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "label"])
        for t, y in zip(time_index, labels):
            w.writerow([_fmt(t), int(y)])


def read_pseudo_labels(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([int(r[1]) for r in rows])


# ---------------------------------------------------------------- sampling


def build_log_posterior(cfg: RunConfig, inp: Inputs, theta_hat, pseudo_labels=None) -> LogPosterior:
    sds = cfg.prior_sd if len(cfg.prior_sd) > 1 else cfg.prior_sd * inp.spec.n_params
    if len(sds) != inp.spec.n_params:
        raise InputError(f"prior_sd needs 1 or {inp.spec.n_params} values, got {len(sds)}")
    prior = PriorSpec(np.asarray(theta_hat, dtype=float), np.asarray(sds, dtype=float))
    if cfg.unsupervised_method is not None:
        r = _kpcr_r(cfg, inp.spec, inp.Xc, theta_hat) if cfg.likelihood == "kpcr" else None
        lik = CalibrationObjective(cfg.likelihood, inp.spec, inp.Xc, pseudo_labels, r)
    else:
        lik = supervised_objective(cfg, inp, theta_hat)
    return LogPosterior(prior, lik)


def sampler_config(cfg: RunConfig):
    s = Sampler(cfg.sampler)
    n = cfg.draws if cfg.draws is not None else DEFAULT_DRAWS[s]
    frac = cfg.burn_in if cfg.burn_in is not None else DEFAULT_BURN_FRACTION[s]
    burn = min(int(frac * n), n - 1)
    if s in (Sampler.AM, Sampler.DRAM):
        return MetropolisConfig(n_draws=n, init_cov_scale=cfg.proposal_scale, seed=cfg.seed, burn_in=burn)
    if s is Sampler.HMC:
        return HmcConfig(n_draws=n, step_size=cfg.step_size, n_leapfrog=cfg.n_leapfrog,
                         seed=cfg.seed, burn_in=burn, warmup=True)
    return NutsConfig(n_draws=n, step_size=cfg.step_size, max_tree_depth=cfg.max_tree_depth,
                      seed=cfg.seed, burn_in=burn, warmup=True)


def stage_sample(cfg: RunConfig, inp: Inputs, theta_hat, pseudo_labels=None) -> Chain:
    lp = build_log_posterior(cfg, inp, theta_hat, pseudo_labels)
    chain = sample(cfg.sampler, lp, theta_hat, sampler_config(cfg))
    chain.param_names = tuple(inp.spec.param_names())
    return chain


def chain_summary(chain: Chain) -> dict:
    kept = chain.kept()
    out = {
        "sampler": chain.sampler.value, "n_draws": chain.n_draws, "burn_in": chain.burn_in,
        "acceptance_rate": chain.acceptance_rate,
        "mean": kept.mean(axis=0).tolist(), "sd": kept.std(axis=0, ddof=1).tolist() if len(kept) > 1 else None,
        "q025": np.quantile(kept, 0.025, axis=0).tolist(), "q975": np.quantile(kept, 0.975, axis=0).tolist(),
    }
    if len(kept) >= 100:
        rep = ess(chain)
        out["ess"] = rep.ess.tolist()
        out["ess_degenerate"] = rep.degenerate.tolist()
    if len(kept) >= 200:
        out["stationary"] = diagnostics(chain).stationary.tolist()
    return out


# ---------------------------------------------------------------- charts


def write_chart(path, chart: ProbabilisticChart, time_index) -> None:
    cols = chart.columns(time_index)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(cols))
        for i in range(len(chart.mean)):
            w.writerow([_fmt(cols[k][i]) for k in cols])


def write_contributions(path, band, time_value) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "variable", "mean", "lower", "upper"])
        for name, m, lo, hi in band.rows():
            w.writerow([_fmt(time_value), name, _fmt(m), _fmt(lo), _fmt(hi)])


def _combined_alarms(chart: DeterministicChart) -> np.ndarray:
    return chart.alarms("t2") | chart.alarms("spe")


def contribution_time(cfg: RunConfig, pm_chart: DeterministicChart) -> int:
    """Configured row, else first posterior-mean alarm plus offset, else the largest SPE."""
    n = pm_chart.stats.spe.size
    if cfg.contrib_time is not None:
        if not 0 <= cfg.contrib_time < n:
            raise InputError(f"contrib_time {cfg.contrib_time} is outside 0..{n - 1}")
        return cfg.contrib_time
    t = default_contribution_time(_combined_alarms(pm_chart), cfg.contrib_offset)
    return t if t is not None else int(np.argmax(pm_chart.stats.spe))


def stage_propagate(cfg: RunConfig, inp: Inputs, chain, theta_hat, out: Path) -> dict:
    """Per-draw propagation; writes every chart and contribution file."""
    r = cfg.r_policy
    params_hat = KernelParams.from_vector(theta_hat, inp.spec.n_lengthscales)
    pm = posterior_mean_chart(chain, inp.Xh, inp.Xm, r, inp.spec, cfg.confidence)
    t_c = contribution_time(cfg, pm)
    det = deterministic_chart(inp.spec, params_hat, inp.Xh, inp.Xm, r, cfg.confidence)
    stats = propagate(chain, inp.Xh, inp.Xm, r, inp.spec, cfg.confidence, [t_c], cfg.workers)
    tidx = inp.monitor.time_index
    charts = {}
    for kind in KINDS:
        charts[kind] = summarize_chart(stats, kind, cfg.credible)
        write_chart(out / f"chart_{kind}.csv", charts[kind], tidx)
        write_chart(out / f"chart_{kind}_deterministic.csv", chart_from_deterministic(det, kind, cfg.credible), tidx)
        write_chart(out / f"chart_{kind}_posterior_mean.csv", chart_from_deterministic(pm, kind, cfg.credible), tidx)
        band = summarize_contributions(stats, t_c, kind, cfg.credible, inp.healthy.names)
        write_contributions(out / f"contrib_{kind}.csv", band, tidx[t_c])
    return {
        "supplied_draws": stats.n_supplied, "retained_draws": stats.n_draws,
        "skipped_draws": stats.n_skipped, "skipped_indices": list(stats.skipped),
        "contribution_row": t_c, "contribution_time": float(tidx[t_c]),
        "posterior_mean_theta": pm.params.to_vector().tolist(),
    }


# ---------------------------------------------------------------- evaluation


def read_chart_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise InputError(f"{path}: empty chart file")
    data = np.array(rows[1:], dtype=float)
    return {name: data[:, j] for j, name in enumerate(rows[0])}


def stage_evaluate(cfg: RunConfig, labels, out: Path) -> dict | None:
    """Metrics for the prior-mean, posterior-mean and probabilistic charts (alarm: mean above limit)."""
    if labels is None:
        return None
    results = {}
    for variant, suffix in (("deterministic", "_deterministic"), ("posterior_mean", "_posterior_mean"),
                            ("probabilistic", "")):
        c = {k: read_chart_columns(out / f"chart_{k}{suffix}.csv") for k in KINDS}
        rep = evaluate_charts(c["t2"]["mean"], c["spe"]["mean"], c["t2"]["limit_mean"][0],
                              c["spe"]["limit_mean"][0], labels, cfg.auc_chart)
        results[variant] = rep.as_dict()
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["key", "value"])
        for variant, rep in results.items():
            for k, v in rep.items():
                w.writerow([f"{variant}.{k}", _fmt(v)])
    return results


def stage_plots(out: Path) -> list[str]:
    from .plots import plot_chart, plot_contributions

    written = []
    for kind in KINDS:
        label = "T2" if kind == "t2" else "SPE"
        for suffix in ("", "_deterministic", "_posterior_mean"):
            src = out / f"chart_{kind}{suffix}.csv"
            if src.is_file():
                plot_chart(src, src.with_suffix(".svg"), ylabel=label)
                written.append(src.with_suffix(".svg").name)
        src = out / f"contrib_{kind}.csv"
        if src.is_file():
            plot_contributions(src, src.with_suffix(".svg"), title=f"{label} contributions")
            written.append(src.with_suffix(".svg").name)
    return written


# ---------------------------------------------------------------- driver


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(_json_safe(payload), indent=2, sort_keys=True) + "\n")


STAGES = ("fit", "sample", "propagate", "evaluate", "plot")


def _read_manifest(out: Path) -> dict:
    path = out / "manifest.json"
    return json.loads(path.read_text()) if path.is_file() else {}


def _need(path: Path, stage: str) -> Path:
    if not path.is_file():
        raise InputError(f"{path.name} not found in {path.parent}; run the {stage!r} stage first")
    return path


def run_pipeline(cfg: RunConfig, stages=STAGES) -> dict:
    """Execute the requested stages in order and return the manifest.

    Stages not requested take their inputs from files a previous invocation
    left in ``cfg.out``. A failing stage raises :class:`StageError` carrying
    the stage name and the manifest filled so far; that partial manifest is
    also written to disk.
    """
    unknown = set(stages) - set(STAGES)
    if unknown:
        raise InputError(f"unknown stages {sorted(unknown)}; expected a subset of {STAGES}")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    config = cfg.to_dict()
    config.pop("out")
    manifest = _read_manifest(out) if set(stages) != set(STAGES) else {}
    manifest.update({"software_version": __version__, "seed": cfg.seed, "config": config})
    manifest.pop("failed_stage", None)
    timings = {}

    def stage(name, fn, *args):
        start = time.perf_counter()
        try:
            return fn(*args)
        except (PkmspcError, ValueError, ArithmeticError, np.linalg.LinAlgError, OSError) as exc:
            manifest["failed_stage"] = name
            write_json(out / "manifest.json", manifest)
            raise StageError(name, exc, manifest) from exc
        finally:
            timings[name] = time.perf_counter() - start

    inp = stage("load", load_inputs, cfg)
    manifest["inputs"] = {
        role: {"file": Path(p).name, "sha256": _sha256(p)}
        for role, p in (("healthy", cfg.healthy), ("monitor", cfg.monitor), ("calibration", cfg.calibration))
        if p
    }
    manifest["data"] = {"variables": list(inp.healthy.names), "n_healthy": inp.healthy.n,
                        "n_monitor": inp.monitor.n}
    unsupervised = cfg.unsupervised_method is not None
    pseudo = theta_hat = chain = None

    if "fit" in stages:
        if unsupervised:
            theta_hat, pseudo, info = stage("fit", stage_tune, cfg, inp)
            write_pseudo_labels(out / "pseudo_labels.csv", inp.calibration.time_index, pseudo)
        else:
            theta_hat, info, _ = stage("fit", stage_calibrate, cfg, inp)
        write_theta(out / "theta_hat.txt", inp.spec, theta_hat)
        manifest["theta_hat"] = dict(zip(inp.spec.param_names(), theta_hat.tolist()))
        manifest["calibration"] = info

    def load_theta():
        return stage("fit", lambda: read_theta(_need(out / "theta_hat.txt", "fit"), inp.spec))

    if "sample" in stages:
        if theta_hat is None:
            theta_hat = load_theta()
        if unsupervised and pseudo is None:
            pseudo = stage("fit", lambda: read_pseudo_labels(_need(out / "pseudo_labels.csv", "fit")))
        chain = stage("sample", stage_sample, cfg, inp, theta_hat, pseudo)
        chain.write_csv(out / "chain.csv")
        manifest["chain"] = chain_summary(chain)

    if "propagate" in stages:
        if theta_hat is None:
            theta_hat = load_theta()
        if chain is None:
            burn = sampler_config(cfg).burn_in

            def load_chain():
                c = Chain.read_csv(_need(out / "chain.csv", "sample"), cfg.sampler, cfg.seed)
                return c.with_burn_in(min(burn, c.n_draws - 1))

            chain = stage("sample", load_chain)
        manifest["propagation"] = stage("propagate", stage_propagate, cfg, inp, chain, theta_hat, out)

    if "evaluate" in stages:
        manifest["metrics"] = stage("evaluate", stage_evaluate, cfg, inp.monitor.labels, out)
    if "plot" in stages and cfg.plots:
        manifest["plots"] = stage("plot", stage_plots, out)
    names = {p.name for p in out.iterdir() if p.is_file() and p.name != "timings.json"}
    manifest["outputs"] = sorted(names | {"manifest.json"})
    write_json(out / "manifest.json", manifest)
    write_json(out / "timings.json", timings)
    return manifest
