"""Acceptance checks for the training client.

Each test drives the real simulator through its public seams only: the
`serve` wire protocol, the `simulate --policy external` hosting path, and
the sweep result files.
"""

import csv
import subprocess
import sys
import time

import pytest

from mixtrain.model import load_checkpoint
from mixtrain.plots import build_emissions_figure, plot_results
from mixtrain.train import TrainConfig, evaluate_checkpoint, train

SCENARIO = "mini"

SMOKE_CONFIG = TrainConfig(
    iterations=5,
    steps_per_iteration=200,
    hidden=(64, 64),
    learning_rate=1e-3,
    discount=0.99,
    batch_size=64,
    min_buffer=128,
    target_sync=100,
    epsilon_decay_steps=600,
    seed=7,
    rv_rate=1.0,
    horizon=60,
    warmup=10.0,
)
EVAL_SEEDS = list(range(101, 111))
EVAL_HORIZON = 150


def _launch(argv, tag):
    """Start a server subprocess and wait for its listen banner."""
    proc = subprocess.Popen(argv, stdout=subprocess.PIPE,
                            stderr=subprocess.STDOUT, text=True)
    deadline = time.monotonic() + 30
    line = ""
    while time.monotonic() < deadline:
        line = proc.stdout.readline()
        if "listening on " in line:
            endpoint = line.rsplit(" ", 1)[1].strip()
            return proc, endpoint
        if proc.poll() is not None:
            break
    proc.kill()
    raise RuntimeError(f"{tag} did not announce a port; last line {line!r}")


@pytest.fixture(scope="module")
def env_endpoint():
    proc, endpoint = _launch(
        [sys.executable, "-m", "mixsim.cli", "serve",
         "--listen", "127.0.0.1:0"], "env service")
    yield endpoint
    proc.terminate()
    proc.wait(timeout=10)


@pytest.fixture(scope="module")
def trained(env_endpoint, tmp_path_factory):
    out = tmp_path_factory.mktemp("smoke")
    ckpt = train(env_endpoint, SCENARIO, SMOKE_CONFIG, out)
    return ckpt, out


def test_smoke_checkpoint_and_curve(trained, capsys):
    ckpt, out = trained
    assert ckpt.exists()
    with open(out / "returns.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iteration", "episodes", "mean_return"]
    assert len(rows) - 1 == SMOKE_CONFIG.iterations
    returns = [float(r[2]) for r in rows[1:]]
    with capsys.disabled():
        print(f"\n[trainer-smoke] 5 iterations complete, return curve "
              f"{returns[0]:.1f} -> {returns[-1]:.1f}")


def test_network_input_matches_handshake(trained, env_endpoint):
    from mixtrain.client import EnvClient

    ckpt, _out = trained
    model, meta = load_checkpoint(ckpt)
    with EnvClient(env_endpoint) as env:
        env.reset(SCENARIO, 1, 1.0, 30)
        obs_dim = env.obs_dim
    assert obs_dim == 16 + 64  # 8 queue/wait pairs + 8x8 interior grid
    assert model.obs_dim == obs_dim
    assert meta["scenario"] == SCENARIO


def test_checkpoint_served_to_simulator(trained, tmp_path, capsys):
    ckpt, _out = trained
    pol, endpoint = _launch(
        [sys.executable, "-m", "mixtrain.cli", "serve-policy",
         "--checkpoint", str(ckpt), "--listen", "127.0.0.1:0"],
        "policy service")
    try:
        res = subprocess.run(
            [sys.executable, "-m", "mixsim.cli", "simulate",
             "--scenario", SCENARIO, "--policy", f"external:{endpoint}",
             "--rv-rate", "1.0", "--seed", "3", "--duration", "120",
             "--window", "60", "--out", str(tmp_path / "ext")],
            capture_output=True, text=True, timeout=120)
    finally:
        pol.terminate()
        pol.wait(timeout=10)
    assert res.returncode == 0, res.stdout + res.stderr
    assert (tmp_path / "ext" / "report.csv").exists()
    with capsys.disabled():
        print("\n[trainer-smoke] checkpoint drove `--policy external` episode")


def test_trained_return_at_least_all_stop(trained, env_endpoint, capsys):
    ckpt, _out = trained
    res = evaluate_checkpoint(env_endpoint, SCENARIO, ckpt, EVAL_SEEDS,
                              rv_rate=SMOKE_CONFIG.rv_rate,
                              horizon=EVAL_HORIZON,
                              warmup=SMOKE_CONFIG.warmup)
    with capsys.disabled():
        print(f"\n[trainer-return] trained {res['trained_mean']:.2f} vs "
              f"all-Stop {res['all_stop_mean']:.2f} over "
              f"{len(EVAL_SEEDS)} episodes")
    assert len(res["trained"]) == len(EVAL_SEEDS)
    assert res["trained_mean"] >= res["all_stop_mean"]


def test_plot_shape_from_sweep_output(tmp_path, capsys):
    out = tmp_path / "sweep"
    res = subprocess.run(
        [sys.executable, "-m", "mixsim.cli", "sweep",
         "--scenario", SCENARIO, "--policy", "fcfs",
         "--rates", "0.1:1.0:0.1", "--duration", "60", "--window", "30",
         "--out", str(out)],
        capture_output=True, text=True, timeout=300)
    assert res.returncode == 0, res.stdout + res.stderr

    fig = build_emissions_figure(out / "report.csv")
    try:
        assert len(fig.axes) == 5
        for ax in fig.axes:
            assert len(ax.get_xticks()) == 10
            dashed = [ln for ln in ax.get_lines()
                      if ln.get_linestyle() == "--"]
            assert len(dashed) == 1
    finally:
        import matplotlib.pyplot as plt

        plt.close(fig)

    figures = plot_results(out, tmp_path / "figs")
    assert (tmp_path / "figs" / "emissions.png").exists()
    assert all(p.exists() for p in figures)
    with capsys.disabled():
        print(f"\n[plot-shape] 5 panels, dashed baseline, 10 ticks; "
              f"{len(figures)} figures rendered")
