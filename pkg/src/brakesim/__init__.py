"""Multi-objective autonomous braking: simulator, trainers, and harness."""

__version__ = "0.1.0"

from .ddpg import DdpgConfig, DdpgTrainer
from .env import BrakingEnv, EnvConfig, EpisodeEvent
from .harness import EvalReport, RunConfig, cmd_eval, cmd_gen_trials, cmd_train
from .ppo import PpoConfig, PpoTrainer
from .trials import SynthParams, Trial, TrialFrame

__all__ = [
    "BrakingEnv",
    "DdpgConfig",
    "DdpgTrainer",
    "EnvConfig",
    "EpisodeEvent",
    "EvalReport",
    "PpoConfig",
    "PpoTrainer",
    "RunConfig",
    "SynthParams",
    "Trial",
    "TrialFrame",
    "cmd_eval",
    "cmd_gen_trials",
    "cmd_train",
    "__version__",
]
