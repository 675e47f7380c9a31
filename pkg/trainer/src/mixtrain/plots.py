"""Figure emitters for the simulator's result files.

Reads the documented CSV artifacts (report.csv, profile.csv) and renders
an emissions-vs-penetration summary plus per-scope acceleration profiles.
Only the file formats couple this module to the simulator.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

# column label the results format uses for the signalized all-HV reference
BASELINE_LABEL = "HVs w/ TS"

_UNITS = {"Fuel": "ml/s", "CO2": "g/s", "CO": "g/s", "HC": "g/s", "NOx": "g/s"}


def _read_rows(path: Path) -> list[list[str]]:
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row]


def _parse_report(path: Path):
    """report.csv -> (labels, {pollutant: {label: avg over intersections}}).

    The per-pollutant value is the unweighted mean of the intersection
    scopes (every scope but the trailing network row).
    """
    rows = _read_rows(path)
    if not rows or rows[0][:2] != ["Intersection", "Pollutant"]:
        raise ValueError(f"{path} is not a results table")
    labels = rows[0][2:]
    if not labels:
        raise ValueError(f"{path} has no result columns")

    by_pollutant: dict[str, list[list[str]]] = {}
    for row in rows[1:]:
        if len(row) != len(rows[0]):
            raise ValueError(f"{path} row width mismatch: {row!r}")
        by_pollutant.setdefault(row[1], []).append(row)

    averages: dict[str, dict[str, float]] = {}
    for pollutant, block in by_pollutant.items():
        scopes = block[:-1] if len(block) > 1 else block  # drop network row
        averages[pollutant] = {}
        for j, label in enumerate(labels):
            vals = [float(r[2 + j]) for r in scopes if r[2 + j] != ""]
            averages[pollutant][label] = (
                sum(vals) / len(vals) if vals else math.nan)
    return labels, averages


def _rate_positions(labels: list[str]) -> list[float]:
    try:
        return [float(lab.rstrip("%")) for lab in labels]
    except ValueError:
        return list(range(len(labels)))


def build_emissions_figure(report_csv: str | Path):
    """One panel per pollutant: mean emission rate against RV penetration,
    with the signalized baseline as a dashed reference. Returns the figure.
    """
    report_csv = Path(report_csv)
    if not report_csv.exists():
        raise FileNotFoundError(report_csv)
    labels, averages = _parse_report(report_csv)
    rate_labels = [lab for lab in labels if lab != BASELINE_LABEL]
    has_baseline = BASELINE_LABEL in labels
    xs = _rate_positions(rate_labels)

    pollutants = list(averages)
    fig, axes = plt.subplots(1, len(pollutants),
                             figsize=(3.2 * len(pollutants), 3.4))
    if len(pollutants) == 1:
        axes = [axes]
    for ax, pollutant in zip(axes, pollutants):
        series = averages[pollutant]
        if rate_labels:
            ys = [series[lab] for lab in rate_labels]
            ax.plot(xs, ys, marker="o", color="tab:blue", label="RVs")
            ax.set_xticks(xs)
            ax.set_xticklabels(rate_labels, rotation=45, fontsize=8)
        if has_baseline and not math.isnan(series[BASELINE_LABEL]):
            ax.axhline(series[BASELINE_LABEL], linestyle="--",
                       color="tab:gray", label=BASELINE_LABEL)
        unit = _UNITS.get(pollutant)
        ax.set_title(pollutant)
        ax.set_xlabel("RV penetration")
        ax.set_ylabel(f"{pollutant} ({unit})" if unit else pollutant)
        ax.legend(fontsize=7)
    fig.tight_layout()
    return fig


def emissions_figure(report_csv: str | Path, out_path: str | Path) -> Path:
    fig = build_emissions_figure(report_csv)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def _parse_profile(path: Path):
    """profile.csv -> (ts, {scope: series}); blanks become NaN."""
    rows = _read_rows(path)
    if not rows or rows[0][:1] != ["t"] or len(rows[0]) < 2:
        raise ValueError(f"{path} is not a profile table")
    scopes = rows[0][1:]
    ts = [float(r[0]) for r in rows[1:]]
    series = {}
    for j, scope in enumerate(scopes):
        series[scope] = [float(r[1 + j]) if r[1 + j] != "" else math.nan
                         for r in rows[1:]]
    return ts, series


def build_profile_figure(ts: list[float], ys: list[float], scope: str):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(ts, ys, color="tab:blue", linewidth=1)
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mean acceleration (m/s^2)")
    ax.set_title(scope)
    fig.tight_layout()
    return fig


def profile_figures(profile_csv: str | Path, out_dir: str | Path,
                    prefix: str = "") -> list[Path]:
    """One acceleration-over-time figure per scope column."""
    profile_csv = Path(profile_csv)
    if not profile_csv.exists():
        raise FileNotFoundError(profile_csv)
    ts, series = _parse_profile(profile_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    for scope, ys in series.items():
        fig = build_profile_figure(ts, ys, scope)
        path = out_dir / f"{prefix}profile_{_safe(scope)}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def _safe(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text.lower()).strip("_") or "scope"


def plot_results(report_dir: str | Path, out_dir: str | Path | None = None) -> list[Path]:
    """Render every figure a results directory supports.

    Expects the directory produced by the simulator's simulate/sweep
    commands: a report.csv at the top plus profile.csv files either
    alongside it or in per-configuration subdirectories.
    """
    report_dir = Path(report_dir)
    out = Path(out_dir) if out_dir is not None else report_dir
    report_csv = report_dir / "report.csv"
    if not report_csv.exists():
        raise FileNotFoundError(f"no report.csv under {report_dir}")
    written = [emissions_figure(report_csv, out / "emissions.png")]
    for prof in sorted(report_dir.glob("profile.csv")) + sorted(
            report_dir.glob("*/profile.csv")):
        rel = prof.parent
        prefix = "" if rel == report_dir else _safe(rel.name) + "_"
        written += profile_figures(prof, out, prefix=prefix)
    return written
