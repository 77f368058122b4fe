"""Quadrotor aerobatics workbench: simulator, maneuver task MDPs,
rotation-equivariant policies, PPO training, evaluation, scripting and a
live WebSocket service."""

__version__ = "0.1.0"

from .config import DEFAULTS, ConfigError, config_hash, load_config
from .tasks import Anchor, Command, TaskId

__all__ = [
    "DEFAULTS", "ConfigError", "config_hash", "load_config",
    "Anchor", "Command", "TaskId", "__version__",
]
