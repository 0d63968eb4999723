"""Adaptive powered-descent guidance: PPO-trained recurrent policies on
randomized 3-DOF landing scenarios, a classical DR/DV baseline, a fast
plane-stack radar altimeter model, and a Monte Carlo evaluation harness."""

from .dynamics import BodyParams, LanderState, ThrustCommand
from .envs import EnvConfig, LanderEnv, StepOutcome, ToyPointMassEnv
from .harness import RunConfig, StatsTable, evaluate, train
from .nets import Network, RunningScaler
from .ppo import UpdateConfig
from .scenarios import SCENARIOS, make_env

__all__ = [
    "BodyParams",
    "EnvConfig",
    "LanderEnv",
    "LanderState",
    "Network",
    "RunConfig",
    "RunningScaler",
    "SCENARIOS",
    "StatsTable",
    "StepOutcome",
    "ThrustCommand",
    "ToyPointMassEnv",
    "UpdateConfig",
    "evaluate",
    "make_env",
    "train",
]

__version__ = "0.1.0"
