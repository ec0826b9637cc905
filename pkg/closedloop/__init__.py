from .analysis import ExperimentSpec, pearson, run_experiments
from .config import load_engine_config
from .engine import EngineConfig, Episode, RolloutSettings, run_closed_loop, run_open_loop, run_suite
from .errors import ClosedLoopError, ValidationError
from .policy import Observation, Policy, PolicyOutput, PolicySpec
from .procgen import ProcGenConfig, generate_scenario, generate_suite
from .report import EpisodeReport, aggregate
from .roadmap import RoadMap
from .scenario import ScenarioDescription, validate_scenario
from .serialization import parse_scenario, serialize_scenario

# Explicitly re-exported members:

__all__ = (
    "ClosedLoopError",
    "EngineConfig",
    "Episode",
    "EpisodeReport",
    "ExperimentSpec",
    "Observation",
    "Policy",
    "PolicyOutput",
    "PolicySpec",
    "ProcGenConfig",
    "RoadMap",
    "RolloutSettings",
    "ScenarioDescription",
    "ValidationError",
    "aggregate",
    "generate_scenario",
    "generate_suite",
    "load_engine_config",
    "parse_scenario",
    "pearson",
    "run_closed_loop",
    "run_experiments",
    "run_open_loop",
    "run_suite",
    "serialize_scenario",
    "validate_scenario",
)
