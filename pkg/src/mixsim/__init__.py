"""Deterministic microscopic simulator for mixed robot/human traffic at
unsignalized intersections, with an emission model, an agent-facing
environment, and a seeded evaluation harness."""

from .control import Action, GateState, SignalPlan, default_signal_plan
from .dynamics import CollisionError, IdmParams, Kind, idm_acceleration
from .emissions import (
    POLLUTANTS,
    EmissionCoefficients,
    EmissionDataError,
    emission_rate,
    load_coefficients,
)
from .env import EpisodeConfig, TrafficEnv, observation_dim, observe, reward
from .harness import RunReport, emit_results, evaluate, run_episode, sweep
from .policies import AllStopPolicy, FcfsPolicy, PolicyHandle
from .protocol import EnvServer, PolicyClient, ProtocolError
from .topology import (
    Approach,
    ConflictTable,
    IntersectionSpec,
    Maneuver,
    Movement,
    NetworkSpec,
    ScenarioError,
    conflicts,
    default_conflict_table,
    load_scenario,
)
from .world import FRAME_METRICS, World

__version__ = "0.1.0"

__all__ = [
    "Action",
    "AllStopPolicy",
    "Approach",
    "CollisionError",
    "ConflictTable",
    "EmissionCoefficients",
    "EmissionDataError",
    "EnvServer",
    "EpisodeConfig",
    "FcfsPolicy",
    "FRAME_METRICS",
    "GateState",
    "IdmParams",
    "IntersectionSpec",
    "Kind",
    "Maneuver",
    "Movement",
    "NetworkSpec",
    "POLLUTANTS",
    "PolicyClient",
    "PolicyHandle",
    "ProtocolError",
    "RunReport",
    "ScenarioError",
    "SignalPlan",
    "TrafficEnv",
    "World",
    "conflicts",
    "default_conflict_table",
    "default_signal_plan",
    "emission_rate",
    "emit_results",
    "evaluate",
    "load_coefficients",
    "load_scenario",
    "observation_dim",
    "observe",
    "reward",
    "run_episode",
    "sweep",
]
