"""Training and plotting client for the intersection traffic simulator.

Talks to the simulator exclusively over its wire protocol and result
files; nothing here imports the simulator package.
"""

from .client import ACTIONS, EnvClient, Transition
from .protocol import ProtocolError

__all__ = ["ACTIONS", "EnvClient", "ProtocolError", "Transition"]
__version__ = "0.1.0"
