"""Static SVG rendering of chart and contribution files.

Output is a pure function of the input file: the SVG id salt is fixed, text
is kept as text, and no creation date is written.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np  # noqa: E402
from matplotlib import rc_context  # noqa: E402
from matplotlib.figure import Figure  # noqa: E402

from .errors import InputError  # noqa: E402

CHART_COLUMNS = ("time", "mean", "median", "lower", "upper", "limit_mean", "limit_lower", "limit_upper")
CONTRIB_COLUMNS = ("time", "variable", "mean", "lower", "upper")

_RC = {"svg.hashsalt": "pkmspc", "svg.fonttype": "none", "font.size": 9, "path.simplify": False}


def _read(path, expected):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != expected:
        raise InputError(f"{path}: expected header {','.join(expected)}")
    if len(rows) < 2:
        raise InputError(f"{path}: no data rows")
    return rows[1:]


def read_chart(path) -> dict:
    rows = _read(path, CHART_COLUMNS)
    try:
        data = np.array(rows, dtype=float)
    except ValueError:
        raise InputError(f"{path}: non-numeric chart value") from None
    return {name: data[:, j] for j, name in enumerate(CHART_COLUMNS)}


def read_contributions(path) -> dict:
    rows = _read(path, CONTRIB_COLUMNS)
    try:
        return {
            "time": float(rows[0][0]),
            "variable": [r[1] for r in rows],
            "mean": np.array([float(r[2]) for r in rows]),
            "lower": np.array([float(r[3]) for r in rows]),
            "upper": np.array([float(r[4]) for r in rows]),
        }
    except (ValueError, IndexError):
        raise InputError(f"{path}: malformed contribution row") from None


def _save(fig, out):
    with rc_context(_RC):
        fig.savefig(out, format="svg", metadata={"Date": None})


def plot_chart(chart_path, out_path, title=None, ylabel=None) -> Path:
    """Statistic trace with its credible band and the control-limit band."""
    c = read_chart(chart_path)
    with rc_context(_RC):
        fig = Figure(figsize=(7.0, 3.2))
        ax = fig.add_subplot()
        t = c["time"]
        ax.fill_between(t, c["lower"], c["upper"], color="tab:blue", alpha=0.25, linewidth=0,
                        label="credible band")
        ax.plot(t, c["mean"], color="tab:blue", linewidth=1.0, label="posterior mean")
        ax.fill_between(t, c["limit_lower"], c["limit_upper"], color="tab:red", alpha=0.15, linewidth=0)
        ax.plot(t, c["limit_mean"], color="tab:red", linestyle="--", linewidth=1.0, label="control limit")
        ax.set_xlabel("sample")
        ax.set_ylabel(ylabel or Path(chart_path).stem)
        if title:
            ax.set_title(title)
        ax.legend(loc="upper left", frameon=False)
        fig.tight_layout()
        _save(fig, out_path)
    return Path(out_path)


def plot_contributions(contrib_path, out_path, title=None) -> Path:
    """Ranked posterior-mean contributions with credible-interval whiskers."""
    c = read_contributions(contrib_path)
    with rc_context(_RC):
        fig = Figure(figsize=(max(4.0, 0.45 * len(c["variable"]) + 1.5), 3.2))
        ax = fig.add_subplot()
        x = np.arange(len(c["variable"]))
        err = np.vstack([c["mean"] - c["lower"], c["upper"] - c["mean"]])
        ax.bar(x, c["mean"], color="tab:blue", alpha=0.7)
        ax.errorbar(x, c["mean"], yerr=np.clip(err, 0, None), fmt="none", ecolor="black",
                    capsize=2, linewidth=0.8)
        ax.axhline(0.0, color="grey", linewidth=0.6)
        ax.set_xticks(x)
        ax.set_xticklabels(c["variable"], rotation=45, ha="right")
        ax.set_ylabel("contribution")
        ax.set_title(title or f"contributions at sample {c['time']:g}")
        fig.tight_layout()
        _save(fig, out_path)
    return Path(out_path)
