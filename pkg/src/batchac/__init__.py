"""Batched, queue-based asynchronous actor-critic training at desk scale."""

from .envs import EnvSpec, make_env
from .nnet import Hyperparams, ModelState, NetworkSpec
from .pipeline import KnobConfig, Pipeline, RunReport, StopCondition, run
from .reference import SyncConfig, train_sync

__all__ = [
    "EnvSpec",
    "Hyperparams",
    "KnobConfig",
    "ModelState",
    "NetworkSpec",
    "Pipeline",
    "RunReport",
    "StopCondition",
    "SyncConfig",
    "make_env",
    "run",
    "train_sync",
]
