"""Build and write the figure kinds.

reward_curves reads the experiment results table (one row per policy,
repetition, round) and draws per-policy mean curves with stderr bands over
rounds. rank_sweep and lambda_sweep read a pre-aggregated sweep table
(policy, x, mean, stderr) and draw mean-vs-x curves with bands.

All statistics here are limited to means and standard errors; anything more
belongs upstream in the experiment harness.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402 - backend must be pinned first

from .errors import EmptyDataError, SchemaError

FIGURE_KINDS = ("reward_curves", "rank_sweep", "lambda_sweep")

RESULTS_COLUMNS = ("policy", "repetition", "round")
SWEEP_COLUMNS = ("policy", "x", "mean", "stderr")

X_LABELS = {
    "reward_curves": "round n",
    "rank_sweep": "rank r",
    "lambda_sweep": "lambda scale l",
}


@dataclass(frozen=True)
class PlotSpec:
    input_csv: Path
    figure_kind: str
    out_path: Path
    title: str = ""
    value_column: str = "avg_cum_reward"

    def __post_init__(self):
        if self.figure_kind not in FIGURE_KINDS:
            raise SchemaError(
                f"unknown figure kind {self.figure_kind!r}; expected one of {FIGURE_KINDS}"
            )
        object.__setattr__(self, "input_csv", Path(self.input_csv))
        object.__setattr__(self, "out_path", Path(self.out_path))


@dataclass(frozen=True)
class Series:
    policy: str
    x: tuple[float, ...]
    mean: tuple[float, ...]
    stderr: tuple[float, ...]


def _read_rows(path: Path, required: tuple[str, ...]) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}; header was {header}")
        rows = list(reader)
    if not rows:
        raise EmptyDataError(f"{path}: no data rows")
    return rows


def reward_series(path: Path, value_column: str) -> list[Series]:
    rows = _read_rows(path, RESULTS_COLUMNS + (value_column,))
    grouped: dict[tuple[str, int], list[float]] = {}
    for row in rows:
        key = (row["policy"], int(row["round"]))
        grouped.setdefault(key, []).append(float(row[value_column]))
    out = []
    for policy in sorted({p for p, _ in grouped}):
        rounds = sorted(r for p, r in grouped if p == policy)
        means, errs = [], []
        for rnd in rounds:
            vals = grouped[(policy, rnd)]
            k = len(vals)
            mean = sum(vals) / k
            if k > 1:
                var = sum((v - mean) ** 2 for v in vals) / (k - 1)
                errs.append(math.sqrt(var) / math.sqrt(k))
            else:
                errs.append(0.0)
            means.append(mean)
        out.append(Series(policy, tuple(float(r) for r in rounds),
                          tuple(means), tuple(errs)))
    return out


def sweep_series(path: Path) -> list[Series]:
    rows = _read_rows(path, SWEEP_COLUMNS)
    grouped: dict[str, list[tuple[float, float, float]]] = {}
    for row in rows:
        grouped.setdefault(row["policy"], []).append(
            (float(row["x"]), float(row["mean"]), float(row["stderr"]))
        )
    out = []
    for policy in sorted(grouped):
        pts = sorted(grouped[policy])
        out.append(
            Series(
                policy,
                tuple(p[0] for p in pts),
                tuple(p[1] for p in pts),
                tuple(p[2] for p in pts),
            )
        )
    return out


def build_figure(spec: PlotSpec):
    """Return (figure, series list); same CSV always yields the same series."""
    if spec.figure_kind == "reward_curves":
        series = reward_series(spec.input_csv, spec.value_column)
    else:
        series = sweep_series(spec.input_csv)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for s in series:
        ax.plot(s.x, s.mean, label=s.policy, marker="o", markersize=3)
        lo = [m - e for m, e in zip(s.mean, s.stderr)]
        hi = [m + e for m, e in zip(s.mean, s.stderr)]
        ax.fill_between(s.x, lo, hi, alpha=0.2)
    ax.set_xlabel(X_LABELS[spec.figure_kind])
    ax.set_ylabel("averaged cumulative reward")
    if spec.title:
        ax.set_title(spec.title)
    ax.legend()
    fig.tight_layout()
    return fig, series


def render(spec: PlotSpec) -> Path:
    """Write the figure for the spec and return the output path."""
    fig, _ = build_figure(spec)
    spec.out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out_path, dpi=150)
    plt.close(fig)
    return spec.out_path
