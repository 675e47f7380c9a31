"""Car-following law against an independent ODE oracle, plus integrator
semantics and the isolated-road harness."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from mixsim.dynamics import (
    VEHICLE_LENGTH,
    WAIT_SPEED_THRESHOLD,
    CollisionError,
    IdmParams,
    Kind,
    Road,
    idm_acceleration,
    idm_acceleration_arrays,
    integrate,
    lane_order,
)

P = IdmParams()


def oracle_accel(v, v_lead, gap, p):
    # independent longhand restatement of the law
    free = p.max_accel * (1.0 - (v / p.desired_speed) ** p.exponent)
    if gap is None:
        return free
    s_star = p.min_gap + v * p.time_headway + v * (v - v_lead) / (
        2.0 * math.sqrt(p.max_accel * p.comfort_decel)
    )
    return free - p.max_accel * (s_star / gap) ** 2


def test_point_values():
    assert idm_acceleration(0.0, None, None, P) == pytest.approx(P.max_accel)
    assert idm_acceleration(P.desired_speed, None, None, P) == pytest.approx(0.0)
    # standstill behind a stopped leader at exactly s0: interaction term is
    # (s0/s0)^2 = 1, free term 1 -> zero net acceleration
    assert idm_acceleration(0.0, 0.0, P.min_gap, P) == pytest.approx(0.0)


def test_no_inner_clamp():
    # closing fast from behind must go more negative than comfort_decel;
    # a formulation clamping s* at zero could not
    a = idm_acceleration(13.0, 0.0, 10.0, P)
    assert a < -P.comfort_decel
    assert a == pytest.approx(oracle_accel(13.0, 0.0, 10.0, P), rel=1e-12)


def test_random_points_match_oracle():
    rng = np.random.default_rng(3)
    for _ in range(500):
        v = float(rng.uniform(0, 16))
        vl = float(rng.uniform(0, 16))
        gap = float(rng.uniform(0.5, 80))
        assert idm_acceleration(v, vl, gap, P) == pytest.approx(
            oracle_accel(v, vl, gap, P), rel=1e-12
        )


def test_guards():
    with pytest.raises(ValueError):
        idm_acceleration(-0.1, None, None, P)
    with pytest.raises(ValueError):
        idm_acceleration(5.0, 5.0, 0.0, P)
    with pytest.raises(ValueError):
        IdmParams(desired_speed=0.0)
    with pytest.raises(ValueError):
        IdmParams(exponent=0.5)


def test_array_form_matches_scalar():
    rng = np.random.default_rng(11)
    n = 200
    v = rng.uniform(0, 16, n)
    vl = rng.uniform(0, 16, n)
    gap = rng.uniform(0.5, 60, n)
    has = rng.random(n) < 0.7
    vmax = np.full(n, P.desired_speed)
    arr = idm_acceleration_arrays(v, vl, gap, has, vmax, P)
    for i in range(n):
        want = idm_acceleration(float(v[i]), float(vl[i]) if has[i] else None,
                                float(gap[i]) if has[i] else None, P)
        assert arr[i] == pytest.approx(want, rel=1e-12)


def test_integrate_clamps_speed_at_zero():
    v, pos, eff = integrate(np.array([1.0]), np.array([-3.0]), np.array([10.0]), 1.0)
    assert v[0] == 0.0
    assert pos[0] == 10.0  # clamped before the position update
    assert eff[0] == pytest.approx(-1.0)  # effective, not commanded


def test_integrate_semi_implicit_order():
    # position moves with the *new* speed
    v, pos, eff = integrate(np.array([2.0]), np.array([1.0]), np.array([0.0]), 0.5)
    assert v[0] == pytest.approx(2.5)
    assert pos[0] == pytest.approx(1.25)
    assert eff[0] == pytest.approx(1.0)


def test_free_vehicle_tracks_ode_oracle():
    """Discrete stepping at dt=0.1 stays close to the continuous solution."""
    sol = solve_ivp(
        lambda t, y: [oracle_accel(y[0], None, None, P)],
        (0.0, 30.0), [0.0], dense_output=True, rtol=1e-10, atol=1e-12,
    )
    road = Road()
    road.add_vehicle(pos=0.0, speed=0.0)
    dt = 0.1
    for k in range(int(30 / dt)):
        road.step_vehicles(dt)
        t = (k + 1) * dt
        v_ode = float(sol.sol(t)[0])
        v_sim = road.vehicle(0).speed
        assert abs(v_sim - v_ode) < 0.12, (t, v_sim, v_ode)


def test_two_vehicle_following_tracks_ode_oracle():
    """Follower behind a constant-speed leader: ODE in (gap, v)."""
    v_lead = 8.0

    def rhs(t, y):
        gap, v = y
        return [v_lead - v, oracle_accel(v, v_lead, gap, P)]

    gap0, v0 = 40.0, 13.0
    sol = solve_ivp(rhs, (0.0, 40.0), [gap0, v0], dense_output=True,
                    rtol=1e-10, atol=1e-12)

    road = Road()
    lead = road.add_vehicle(pos=100.0, speed=v_lead, scripted=lambda t: 0.0)
    foll = road.add_vehicle(pos=100.0 - VEHICLE_LENGTH - gap0, speed=v0)
    dt = 0.1
    for k in range(int(40 / dt)):
        road.step_vehicles(dt)
        t = (k + 1) * dt
        gap_sim = road.gaps()[0]
        gap_ode = float(sol.sol(t)[0])
        assert abs(gap_sim - gap_ode) < 0.25, (t, gap_sim, gap_ode)
    # long-run equilibrium gap solves 1 - (v/v0)^d - (s*/s)^2 = 0 at dv=0
    s_star = P.min_gap + v_lead * P.time_headway
    s_eq = s_star / math.sqrt(1.0 - (v_lead / P.desired_speed) ** P.exponent)
    assert road.gaps()[0] == pytest.approx(s_eq, abs=0.3)


def test_lane_order_tie_break():
    class S:
        def __init__(self, id, pos, spawn_time):
            self.id, self.pos, self.spawn_time = id, pos, spawn_time

    a, b, c = S(3, 50.0, 2.0), S(1, 50.0, 1.0), S(2, 80.0, 5.0)
    assert [s.id for s in lane_order([a, b, c])] == [2, 1, 3]


def test_road_rejects_overlap():
    road = Road()
    road.add_vehicle(pos=10.0)
    with pytest.raises(ValueError, match="overlaps"):
        road.add_vehicle(pos=12.0)


def test_road_collision_detected():
    road = Road()
    road.add_vehicle(pos=20.0, speed=0.0, scripted=lambda t: 0.0)
    # scripted follower that ignores the leader entirely
    road.add_vehicle(pos=0.0, speed=10.0, scripted=lambda t: 0.0)
    with pytest.raises(CollisionError):
        for _ in range(30):
            road.step_vehicles(1.0)


@given(
    speeds=st.lists(st.floats(0.0, 13.89), min_size=2, max_size=8),
    gaps=st.lists(st.floats(2.0, 40.0), min_size=7, max_size=7),
    lead_stop_at=st.floats(1.0, 10.0),
)
@settings(max_examples=40, deadline=None)
def test_platoon_never_collides(speeds, gaps, lead_stop_at):
    """Arbitrary platoon whose leader brakes to a stop: no rear-end contact.

    Gaps are at least min_gap so the initial state is itself admissible.
    """
    road = Road()
    pos = 500.0
    road.add_vehicle(pos=pos, speed=speeds[0],
                     scripted=lambda t: -4.5 if t >= lead_stop_at else 0.0)
    for i, v in enumerate(speeds[1:]):
        pos -= VEHICLE_LENGTH + gaps[i]
        road.add_vehicle(pos=pos, speed=v)
    for _ in range(600):
        road.step_vehicles(0.1)  # raises CollisionError on contact
    assert all(g > 0 for g in road.gaps())


def test_constants():
    assert VEHICLE_LENGTH == 5.0
    assert WAIT_SPEED_THRESHOLD == 0.1
    assert Kind.RV.value == "RV"
