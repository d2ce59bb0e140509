# Services Package

from .scenario import Scenario, ScenarioConfigError, TaskKind, load_scenario, parse_scenario
from .runner import RunnerConfig, ScenarioRunner, get_scenario_runner
from .reports import Artifacts, write_artifacts

__all__ = [
    'Scenario',
    'ScenarioConfigError',
    'TaskKind',
    'load_scenario',
    'parse_scenario',
    'RunnerConfig',
    'ScenarioRunner',
    'get_scenario_runner',
    'Artifacts',
    'write_artifacts',
]
