"""End-to-end acceptance checks, one test per shipped guarantee.

Each test prints one pass/fail line under pytest -v. The slow full-network
sweep (every penetration rate, ten seeds, full-length episodes) runs once
in a module fixture and feeds both the safety and the fuel-direction
checks.
"""

import math
import time

import numpy as np
import pytest

from mixsim.control import Action
from mixsim.demand import DemandSpec, arrival_stream
from mixsim.dynamics import IdmParams, Road, VEHICLE_LENGTH
from mixsim.emissions import POLLUTANTS, emission_rate, load_coefficients
from mixsim.env import FRAME_METRICS, reward
from mixsim.harness import evaluate, emit_results
from mixsim.policies import PolicyHandle
from mixsim.topology import Movement, default_conflict_table

FCFS = PolicyHandle(kind="fcfs")
SIGNAL = PolicyHandle(kind="signal")
RATES = tuple(round(0.1 * k, 1) for k in range(1, 11))


# ----------------------------------------------------------------------
# emission model against longhand arithmetic


def test_emission_rates_match_longhand_on_grid():
    coeffs = load_coefficients()
    vs = np.linspace(0.0, 25.0, 100)
    accs = np.linspace(-4.5, 4.5, 100)
    start = time.perf_counter()
    for pollutant in POLLUTANTS:
        f1, f2, f3, f4, f5, f6 = coeffs.coeffs(pollutant)
        grid = emission_rate(coeffs, pollutant, vs[None, :].repeat(100, 0),
                             accs[:, None].repeat(100, 1))
        for i, a in enumerate(accs):
            for j, v in enumerate(vs):
                raw = math.fsum([f1, f2 * a * v, f3 * a * a * v,
                                 f4 * v, f5 * v * v, f6 * v ** 3])
                want = max(raw / coeffs.scale, 0.0)
                got = grid[i, j]
                err = abs(got - want) / max(abs(want), 1e-300)
                assert err <= 1e-12 or got == want == 0.0, (pollutant, v, a)
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"grid check took {elapsed:.2f}s"


# ----------------------------------------------------------------------
# movement compatibility relation, all 36 unordered pairs


COMPATIBLE = {
    frozenset({Movement.N_S, Movement.N_L}),   # same approach
    frozenset({Movement.E_S, Movement.E_L}),
    frozenset({Movement.S_S, Movement.S_L}),
    frozenset({Movement.W_S, Movement.W_L}),
    frozenset({Movement.N_S, Movement.S_S}),   # opposing straights
    frozenset({Movement.E_S, Movement.W_S}),
    frozenset({Movement.N_L, Movement.S_L}),   # opposing lefts
    frozenset({Movement.E_L, Movement.W_L}),
}


def test_conflict_relation_exhaustive():
    table = default_conflict_table()
    movements = list(Movement)
    checked = 0
    non_conflicting = 0
    for i, a in enumerate(movements):
        for b in movements[i:]:
            checked += 1
            want_conflict = a is not b and frozenset({a, b}) not in COMPATIBLE
            assert table.conflicts(a, b) == want_conflict, (a, b)
            assert table.conflicts(b, a) == want_conflict, (b, a)
            if not want_conflict and a is not b:
                non_conflicting += 1
    assert checked == 36
    assert non_conflicting == 8


# ----------------------------------------------------------------------
# reward algebra over random decision triples


def test_reward_contract_over_random_triples():
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        w = float(rng.uniform(0.0, 1.0))
        go = bool(rng.integers(0, 2))
        flag = bool(rng.integers(0, 2))
        r = reward(Action.GO if go else Action.STOP, w, flag)
        assert r.r_l == (w if go else -w)
        assert r.p_c == (-1.0 if flag else 0.0)
        assert r.total == r.r_l + r.p_c
        assert -2.0 <= r.total <= 1.0


# ----------------------------------------------------------------------
# car-following sanity


def test_car_following_sanity():
    params = IdmParams()
    dt = 0.1

    # free road: desired speed reached within 1% inside 120 s
    road = Road()
    road.add_vehicle(pos=0.0, speed=0.0)
    converged_at = None
    t = 0.0
    while t < 120.0:
        road.step_vehicles(dt)
        t += dt
        if converged_at is None and abs(
            road.vehicle(0).speed - params.desired_speed
        ) <= 0.01 * params.desired_speed:
            converged_at = t
            break
    assert converged_at is not None and converged_at <= 120.0

    # approach to a stopped leader settles near the standstill spacing
    road = Road()
    road.add_vehicle(pos=200.0, speed=0.0, scripted=lambda t: 0.0)
    road.add_vehicle(pos=200.0 - VEHICLE_LENGTH - 150.0, speed=params.desired_speed)
    for _ in range(int(150.0 / dt)):
        road.step_vehicles(dt)
    gap = road.gaps()[0]
    assert params.min_gap - 0.1 <= gap <= params.min_gap + 2.0, gap
    assert road.vehicle(1).speed == 0.0

    # ten-vehicle platoon, leader brakes hard: the wave propagates with no
    # contact, at the fine step and at the whole-second episode step
    for wave_dt in (dt, 1.0):
        road = Road()
        road.add_vehicle(pos=1000.0, speed=13.0,
                         scripted=lambda t: -4.5 if t >= 5.0 else 0.0)
        pos = 1000.0
        for _ in range(9):
            pos -= VEHICLE_LENGTH + 15.0
            road.add_vehicle(pos=pos, speed=13.0)
        for _ in range(int(120.0 / wave_dt)):
            road.step_vehicles(wave_dt)  # CollisionError would fail the test
        assert all(g > 0.0 for g in road.gaps())


# ----------------------------------------------------------------------
# demand calibration


def test_arrival_rates_match_targets_per_lane(paper4_network):
    targets = {"229": 1157.0, "499": 1089.0, "332": 928.0, "334": 789.0}
    seeds = range(1, 51)
    hours = len(list(seeds))  # one hour per seed
    for i, spec in enumerate(paper4_network.intersections):
        want = targets[spec.id]
        assert spec.per_lane_demand == want
        for lane in range(spec.lane_count):
            n = 0
            for seed in range(1, 51):
                dspec = DemandSpec(per_lane_rate=want, rv_penetration=0.5, seed=seed)
                n += len(arrival_stream(dspec, (i, lane), 3600.0))
            rate = n / hours
            assert abs(rate - want) / want <= 0.05, (spec.id, lane, rate)


# ----------------------------------------------------------------------
# evaluation window protocol


def test_evaluation_window_is_trailing_500_of_1000(mini_network):
    rep = evaluate(mini_network, FCFS, rv_rate=1.0, n_runs=10, duration=1000,
                   window=500)
    assert rep.config["seeds"] == list(range(1, 11))
    assert len(rep.episodes) == 10
    conf_idx = FRAME_METRICS.index("conflicts")
    for k, ep in enumerate(rep.episodes):
        assert ep.frames.shape[0] == 1000
        tail = ep.frames[500:1000]           # seconds 501..1000
        assert tail.shape[0] == 500
        for s, scope in enumerate(rep.scope_names):
            for j, m in enumerate(FRAME_METRICS):
                col = tail[:, s, j]
                good = col[~np.isnan(col)]
                if j == conf_idx:
                    want = float(np.nansum(col))
                elif len(good) == 0:
                    assert rep.per_run[k][scope][m] is None
                    continue
                else:
                    want = float(good.mean())
                got = rep.per_run[k][scope][m]
                assert got == pytest.approx(want, rel=1e-9, abs=1e-9), (scope, m)


# ----------------------------------------------------------------------
# the full-network sweep: safety everywhere, fuel direction at full
# penetration


@pytest.fixture(scope="module")
def full_sweep(paper4_network):
    reports = {}
    start = time.perf_counter()
    for rate in RATES:
        reports[rate] = evaluate(paper4_network, FCFS, rate, n_runs=10,
                                 duration=1000, window=500)
    elapsed = time.perf_counter() - start
    return reports, elapsed


def test_fcfs_safe_at_every_penetration(full_sweep, capsys):
    reports, elapsed = full_sweep
    episodes = 0
    for rate in RATES:
        rep = reports[rate]
        for ep in rep.episodes:
            episodes += 1
            assert ep.monitor_violations == 0, (rate, ep.seed)
            assert ep.max_wait < 1000.0, (rate, ep.seed, ep.max_wait)
    assert episodes == 100
    with capsys.disabled():
        print(f"\n  [safety] 100 episodes clean, sweep wall time {elapsed:.0f}s")
    assert elapsed < 600.0, f"sweep took {elapsed:.0f}s"


def test_full_rv_fuel_below_signal_baseline(full_sweep, paper4_network, capsys):
    reports, _ = full_sweep
    fcfs_fuel = reports[1.0].four_intersection_average["fuel"]
    baseline = evaluate(paper4_network, SIGNAL, 0.0, n_runs=10,
                        duration=1000, window=500)
    signal_fuel = baseline.four_intersection_average["fuel"]
    assert fcfs_fuel is not None and signal_fuel is not None
    ratio = fcfs_fuel / signal_fuel
    with capsys.disabled():
        print(f"\n  [fuel] full-RV {fcfs_fuel:.4f} ml/s vs signal "
              f"{signal_fuel:.4f} ml/s, ratio {ratio:.4f}")
    assert fcfs_fuel < signal_fuel, f"ratio {ratio:.4f}"


# ----------------------------------------------------------------------
# reproducibility of emitted artifacts


def test_reruns_are_byte_identical(tmp_path, paper4_network):
    def produce(d):
        rep = evaluate(paper4_network, FCFS, rv_rate=0.6, n_runs=2,
                       duration=200, window=100, seeds=(1, 2))
        return emit_results(rep, d)

    first = produce(tmp_path / "a")
    second = produce(tmp_path / "b")
    assert [p.name for p in first] == [p.name for p in second]
    for pa, pb in zip(first, second):
        assert pa.read_bytes() == pb.read_bytes(), pa.name
