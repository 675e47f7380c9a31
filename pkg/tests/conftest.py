import pytest

from mixsim import load_scenario
from mixsim.topology import parse_scenario

# One intersection, two lanes per approach, light demand. Small enough for
# tick-level hand analysis, busy enough to exercise queues.
TINY_SCENARIO = """
[network]
name = tiny

[intersection X]
lanes = 8
demand = 400
lane_length = 150
control_zone = 40
"""


@pytest.fixture(scope="session")
def tiny_network():
    return parse_scenario(TINY_SCENARIO, origin="tiny")


@pytest.fixture(scope="session")
def mini_network():
    return load_scenario("mini")


@pytest.fixture(scope="session")
def paper4_network():
    return load_scenario("paper4")
