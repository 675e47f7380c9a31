"""Experiment runner: seeded evaluations, penetration sweeps, result files.

The evaluation protocol: n seeded episodes of `duration` seconds, metrics
collected every second, and every reported aggregate taken over the last
`window` seconds only (frames duration-window+1 .. duration). Cross-run
aggregation is the unweighted mean over seeds; the four-intersection
average is the unweighted mean of the per-intersection means. A metric
absent in a frame (empty scope) is skipped by every average, and an
all-absent window reports an absent value, never zero.

Output files per configuration:
  frames_<seed>.csv     raw per-second frames, long format, one row per
                        (t, scope); empty fields mark absent values
  conflicts_<seed>.csv  one row per flagged conflicting release
  report.csv            pollutant table, rows (intersection x pollutant)
  report.struct         the full report as JSON
  profile.csv           smoothed mean-acceleration series per scope
All aggregates in report.csv/report.struct are recomputable from the
frames files by straight averaging.
"""

from __future__ import annotations

import concurrent.futures
import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emissions import POLLUTANTS
from .env import EpisodeConfig, TrafficEnv
from .policies import ExternalPolicy, FcfsPolicy, PolicyHandle
from .topology import NetworkSpec, load_scenario
from .world import FRAME_METRICS

DEFAULT_SEEDS = tuple(range(1, 11))
BASELINE_LABEL = "HVs w/ TS"

_POLLUTANT_TITLES = {"fuel": "Fuel", "co2": "CO2", "co": "CO", "hc": "HC", "nox": "NOx"}


@dataclass(frozen=True)
class MetricsFrame:
    """One simulated second: per-scope metric values (None = absent)."""

    t: int
    scopes: dict[str, dict[str, float | None]]


@dataclass
class EpisodeResult:
    seed: int
    frames: np.ndarray  # (duration, n_scopes, n_metrics), NaN = absent
    scope_names: list[str]
    conflict_log: list[tuple[float, str, str, str]]
    conflict_flags: int
    monitor_violations: int
    crossed: list[int]
    deferred_seconds: float
    max_wait: float


@dataclass
class RunReport:
    config: dict
    scope_names: list[str]
    per_run: list[dict[str, dict[str, float | None]]]
    mean: dict[str, dict[str, float | None]]
    four_intersection_average: dict[str, float | None]
    profile: dict[str, list[float | None]]
    episodes: list[EpisodeResult] = field(repr=False, default_factory=list)


def frames_to_records(frames: np.ndarray, scope_names: list[str]):
    """Iterate a frames array as MetricsFrame records (t starts at 1)."""
    for k in range(frames.shape[0]):
        scopes = {}
        for s, name in enumerate(scope_names):
            row = frames[k, s]
            scopes[name] = {
                m: (None if math.isnan(row[j]) else float(row[j]))
                for j, m in enumerate(FRAME_METRICS)
            }
        yield MetricsFrame(t=k + 1, scopes=scopes)


def run_episode(
    network: NetworkSpec,
    policy: PolicyHandle,
    rv_rate: float,
    seed: int,
    duration: int = 1000,
    dt: float = 1.0,
    record_metrics: bool = True,
    trajectory_writer=None,
) -> EpisodeResult:
    """One full seeded episode under the given policy."""
    config = EpisodeConfig(horizon=int(round(duration / dt)), dt=dt)
    env = TrafficEnv(
        network, config,
        signalized=policy.kind == "signal",
        record_metrics=record_metrics,
        trajectory_writer=trajectory_writer,
    )
    obs = env.reset(seed=seed, rv_rate=rv_rate)

    external = None
    fcfs = FcfsPolicy() if policy.kind == "fcfs" else None
    if policy.kind == "external":
        external = ExternalPolicy(policy.endpoint, timeout=policy.params.get("timeout", 5.0))
        external.start(env.obs_dim)
    try:
        done = False
        while not done:
            if fcfs is not None:
                actions = fcfs.decide(env.world)
            elif external is not None:
                actions = external.decide_from_observations(env.world.t, obs)
            else:
                actions = {}
            obs, _rewards, done, info = env.step(actions)
    finally:
        if external is not None:
            external.close()

    world = env.world
    max_wait = 0.0
    if world.active_count():
        idx = world._alive_indices()
        max_wait = float(world.wait[idx].max())
    return EpisodeResult(
        seed=seed,
        frames=world.frames.copy(),
        scope_names=list(world.scope_names),
        conflict_log=list(world.conflict_log),
        conflict_flags=world.conflict_flags,
        monitor_violations=world.monitor_violations,
        crossed=[int(x) for x in world.crossed],
        deferred_seconds=world.deferred_seconds,
        max_wait=max_wait,
    )



def _nanmean(arr: np.ndarray, axis: int) -> np.ndarray:
    """nanmean that treats an all-absent slice as absent, quietly."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return np.nanmean(arr, axis=axis)

def _window_means(frames: np.ndarray, duration: int, window: int) -> np.ndarray:
    """Per (scope, metric) aggregate over the reporting window.

    Means skip absent frames; the conflicts column is a count and is
    summed. Returns NaN where every frame in the window is absent.
    """
    if window > duration:
        raise ValueError("window cannot exceed duration")
    sl = frames[duration - window: duration]
    out = _nanmean(sl, axis=0)
    conf_idx = FRAME_METRICS.index("conflicts")
    out[:, conf_idx] = np.nansum(sl[:, :, conf_idx], axis=0)
    return out


def _to_optional(x: float) -> float | None:
    return None if math.isnan(x) else float(x)


def acceleration_profile(series, window_size: int = 10) -> list[float | None]:
    """Trailing moving average; the first window_size-1 points average the
    available prefix. Absent points are skipped; a fully absent window
    yields an absent point."""
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    arr = np.asarray([np.nan if v is None else v for v in series], dtype=np.float64)
    out: list[float | None] = []
    for k in range(len(arr)):
        chunk = arr[max(0, k - window_size + 1): k + 1]
        good = chunk[~np.isnan(chunk)]
        out.append(float(good.mean()) if len(good) else None)
    return out


def evaluate(
    network: NetworkSpec | str,
    policy: PolicyHandle,
    rv_rate: float,
    n_runs: int = 10,
    duration: int = 1000,
    window: int = 500,
    seeds: tuple[int, ...] | None = None,
    dt: float = 1.0,
    workers: int = 1,
    label: str | None = None,
    trajectory_writer=None,
) -> RunReport:
    """Run the evaluation protocol and aggregate over seeds.

    seeds defaults to 1..n_runs. Episodes may run in parallel processes
    (workers > 1); results merge in seed order either way.
    """
    if isinstance(network, str):
        network = load_scenario(network)
    if seeds is None:
        seeds = tuple(range(1, n_runs + 1))
    if len(seeds) != n_runs:
        raise ValueError(f"{n_runs} runs need {n_runs} seeds, got {len(seeds)}")
    if policy.kind == "external" and workers > 1:
        raise ValueError("external policies run with workers=1 (one endpoint)")
    if trajectory_writer is not None and workers > 1:
        raise ValueError("trajectory logging runs with workers=1")

    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(run_episode, network, policy, rv_rate, s, duration, dt)
                for s in seeds
            ]
            episodes = [f.result() for f in futures]
    else:
        episodes = [
            run_episode(network, policy, rv_rate, s, duration, dt,
                        trajectory_writer=trajectory_writer)
            for s in seeds
        ]

    scope_names = episodes[0].scope_names
    per_run_arrays = [_window_means(e.frames, duration, window) for e in episodes]
    stacked = np.stack(per_run_arrays)  # (runs, scopes, metrics)
    mean_arr = _nanmean(stacked, axis=0)

    def to_dict(arr: np.ndarray) -> dict[str, dict[str, float | None]]:
        return {
            scope: {m: _to_optional(arr[s, j]) for j, m in enumerate(FRAME_METRICS)}
            for s, scope in enumerate(scope_names)
        }

    per_run = [to_dict(a) for a in per_run_arrays]
    mean = to_dict(mean_arr)

    n_int = len(scope_names) - 1  # trailing scope is the network
    four_avg: dict[str, float | None] = {}
    for j, m in enumerate(FRAME_METRICS):
        vals = mean_arr[:n_int, j]
        good = vals[~np.isnan(vals)]
        four_avg[m] = float(good.mean()) if len(good) else None

    accel_idx = FRAME_METRICS.index("mean_accel")
    all_frames = np.stack([e.frames for e in episodes])  # (runs, T, scopes, metrics)
    accel_by_t = _nanmean(all_frames[:, :, :, accel_idx], axis=0)  # (T, scopes)
    profile = {
        scope: acceleration_profile(accel_by_t[:, s])
        for s, scope in enumerate(scope_names)
    }

    return RunReport(
        config={
            "scenario": network.name,
            "policy": policy.kind,
            "endpoint": policy.endpoint,
            "rv_rate": rv_rate,
            "label": label or _default_label(policy, rv_rate),
            "n_runs": n_runs,
            "duration": duration,
            "window": window,
            "dt": dt,
            "seeds": list(seeds),
        },
        scope_names=scope_names,
        per_run=per_run,
        mean=mean,
        four_intersection_average=four_avg,
        profile=profile,
        episodes=episodes,
    )


def _default_label(policy: PolicyHandle, rv_rate: float) -> str:
    if policy.kind == "signal" and rv_rate == 0.0:
        return BASELINE_LABEL
    return f"{int(round(rv_rate * 100))}%"


def sweep(
    network: NetworkSpec | str,
    policy: PolicyHandle,
    penetrations: tuple[float, ...] = tuple(r / 10 for r in range(1, 11)),
    include_baseline: bool = True,
    **kwargs,
) -> list[RunReport]:
    """One evaluate per penetration rate, plus the signalized all-HV
    baseline, in column order baseline-first."""
    if any(not 0.0 <= r <= 1.0 for r in penetrations):
        raise ValueError("penetration rates must lie in [0, 1]")
    if isinstance(network, str):
        network = load_scenario(network)
    reports = []
    if include_baseline:
        reports.append(
            evaluate(network, PolicyHandle(kind="signal"), 0.0,
                     label=BASELINE_LABEL, **kwargs)
        )
    for rate in penetrations:
        reports.append(evaluate(network, policy, rate, **kwargs))
    return reports


# ----------------------------------------------------------------------
# result files


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x))


def write_frames_csv(path: Path, frames: np.ndarray, scope_names: list[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "scope", *FRAME_METRICS])
        for k in range(frames.shape[0]):
            for s, scope in enumerate(scope_names):
                row = frames[k, s]
                w.writerow([k + 1, scope] + [_fmt(v) for v in row])


def write_conflicts_csv(path: Path, log) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "intersection", "movementA", "movementB"])
        for t, iid, a, b in log:
            w.writerow([_fmt(t), iid, a, b])


def report_table(reports: list[RunReport]) -> list[list[str]]:
    """Pollutant table: header then one row per (intersection, pollutant),
    intersection scopes first, the network scope last."""
    scope_names = reports[0].scope_names
    header = ["Intersection", "Pollutant"] + [r.config["label"] for r in reports]
    rows = [header]
    for p in POLLUTANTS:
        for scope in scope_names:
            row = [scope, _POLLUTANT_TITLES[p]]
            for r in reports:
                row.append(_fmt(r.mean[scope][p]))
            rows.append(row)
    return rows


def emit_results(reports: RunReport | list[RunReport], out_dir: str | Path) -> list[Path]:
    """Write every result file; returns the paths written.

    A single report writes into out_dir directly; a list (sweep) writes one
    subdirectory per configuration plus a combined report.csv.
    """
    single = isinstance(reports, RunReport)
    report_list = [reports] if single else list(reports)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    for rep in report_list:
        sub = out_dir if single else out_dir / _dir_label(rep.config["label"])
        sub.mkdir(parents=True, exist_ok=True)
        for ep in rep.episodes:
            p = sub / f"frames_{ep.seed}.csv"
            write_frames_csv(p, ep.frames, rep.scope_names)
            written.append(p)
            p = sub / f"conflicts_{ep.seed}.csv"
            write_conflicts_csv(p, ep.conflict_log)
            written.append(p)
        p = sub / "report.struct"
        p.write_text(_report_json(rep))
        written.append(p)
        p = sub / "profile.csv"
        _write_profile(p, rep)
        written.append(p)
        if not single:
            p = sub / "report.csv"
            _write_table(p, report_table([rep]))
            written.append(p)

    p = out_dir / "report.csv"
    _write_table(p, report_table(report_list))
    written.append(p)
    return written


def _dir_label(label: str) -> str:
    safe = "".join(c if c.isalnum() else "_" for c in label.lower())
    return safe.strip("_") or "run"


def _write_table(path: Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _write_profile(path: Path, rep: RunReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *rep.scope_names])
        n = len(next(iter(rep.profile.values())))
        for k in range(n):
            w.writerow([k + 1] + [_fmt(rep.profile[s][k]) for s in rep.scope_names])


def _report_json(rep: RunReport) -> str:
    payload = {
        "config": rep.config,
        "scopes": rep.scope_names,
        "metrics": list(FRAME_METRICS),
        "per_run": [
            {"seed": ep.seed, "window_means": rep.per_run[k],
             "conflict_flags": ep.conflict_flags,
             "monitor_violations": ep.monitor_violations,
             "crossed": ep.crossed,
             "deferred_seconds": ep.deferred_seconds,
             "max_wait": ep.max_wait}
            for k, ep in enumerate(rep.episodes)
        ],
        "mean": rep.mean,
        "four_intersection_average": rep.four_intersection_average,
        "profile": rep.profile,
    }
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
