"""Deterministic active multi-target tracking workbench."""

from .world import (
    AgentCommand,
    AgentPose,
    FieldOfView,
    OccupancyGrid,
    SimConfig,
    TargetState,
    load_map,
)
from .estimation import Belief, FilterBank, TargetStatus
from .planners import FrontierWeights, Path, PlannerMode, RrtParams
from .metrics import MetricsFrame
from .dataset import EpisodeRecord, StepRecord, TrainingWindow
from .harness import EpisodeConfig, EpisodeResult, run_episode, run_suite

__version__ = "0.1.0"

__all__ = [
    "AgentCommand", "AgentPose", "FieldOfView", "OccupancyGrid", "SimConfig",
    "TargetState", "load_map", "Belief", "FilterBank", "TargetStatus",
    "FrontierWeights", "Path", "PlannerMode", "RrtParams", "MetricsFrame",
    "EpisodeRecord", "StepRecord", "TrainingWindow", "EpisodeConfig",
    "EpisodeResult", "run_episode", "run_suite",
]
