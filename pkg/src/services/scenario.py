"""
Scenario files.

One scenario per INI file with [channel], [system], [task] and an optional
[solver] section. List values use spaces or commas inside a row and ';'
between rows:

    [channel]
    family = explicit
    gains = 2 1; 1 2
    weights = 0.5 0.5
"""

import configparser
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from channel.grid import build_grid
from channel.models import ChannelGrid, ChannelSpec, FadingFamily, GridMode, SystemParams
from config.settings import get_settings
from games.models import PayoffMode

logger = logging.getLogger(__name__)

SECTIONS = ("channel", "system", "task", "solver")


class ScenarioConfigError(ValueError):
    """Scenario file cannot be read or does not validate."""


class TaskKind(str, Enum):
    """What a scenario computes."""
    NASH = "nash"
    STACKELBERG_SWEEP = "stackelberg-sweep"
    EPSILON_STACKELBERG = "epsilon-stackelberg"
    CAPACITY_BOUNDARY = "capacity-boundary"
    REPEATED = "repeated"
    VECTOR_NASH = "vector-nash"
    VECTOR_GAP = "vector-gap"
    AUDIT = "audit"


def _number(token: str) -> float:
    value = float(token)
    if math.isnan(value):
        raise ValueError(f"'{token}' is not a number")
    return value


def _row(text: str) -> List[float]:
    tokens = text.replace(",", " ").split()
    if not tokens:
        raise ValueError("empty list")
    return [_number(t) for t in tokens]


def _rows(text: str) -> List[List[float]]:
    return [_row(part) for part in text.split(";") if part.strip()]


def _blocks(text: str) -> List[List[List[float]]]:
    """'a b, c d; e f, g h' -> states of per-user antenna rows."""
    states = []
    for part in text.split(";"):
        if not part.strip():
            continue
        states.append([[_number(t) for t in user.split()] for user in part.split(",")])
    return states


class ChannelSection(BaseModel):
    """[channel]: fading family, discretization and seed."""

    model_config = ConfigDict(extra="forbid")

    family: FadingFamily = Field(..., description="Fading family")
    num_users: int = Field(default=2, description="Number of users")
    means: Optional[List[float]] = Field(None, description="Exponential means")
    low: Optional[List[float]] = Field(None, description="Uniform lower bounds")
    high: Optional[List[float]] = Field(None, description="Uniform upper bounds")
    gains: Optional[List[List[float]]] = Field(None, description="Explicit scalar states, one row per state")
    gain_vectors: Optional[List[List[List[float]]]] = Field(None, description="Explicit vector states")
    weights: Optional[List[float]] = Field(None, description="Explicit state weights, equal when omitted")
    mode: GridMode = Field(default=GridMode.MONTE_CARLO, description="Discretization mode")
    resolution: int = Field(default=1000, description="Samples, or nodes per user in quadrature mode")
    seed: int = Field(default=0, description="Scenario seed")
    num_antennas: Optional[int] = Field(None, description="Receive antennas for a vector channel")
    dump_grid: bool = Field(default=False, description="Write grid.csv next to the results")

    @field_validator('means', 'low', 'high', 'weights', mode='before')
    @classmethod
    def parse_row(cls, v):
        return _row(v) if isinstance(v, str) else v

    @field_validator('gains', mode='before')
    @classmethod
    def parse_rows(cls, v):
        return _rows(v) if isinstance(v, str) else v

    @field_validator('gain_vectors', mode='before')
    @classmethod
    def parse_blocks(cls, v):
        return _blocks(v) if isinstance(v, str) else v

    @field_validator('resolution')
    @classmethod
    def validate_resolution(cls, v):
        if v < 1:
            raise ValueError("resolution must be at least 1")
        return v

    @model_validator(mode='after')
    def validate_explicit(self):
        if self.family != FadingFamily.EXPLICIT:
            return self
        rows = self.gains if self.gains is not None else self.gain_vectors
        if rows is None:
            raise ValueError("explicit family needs 'gains' or 'gain_vectors'")
        if self.gains is not None and self.gain_vectors is not None:
            raise ValueError("give either 'gains' or 'gain_vectors', not both")
        if self.weights is not None and len(self.weights) != len(rows):
            raise ValueError(f"{len(self.weights)} weights for {len(rows)} states")
        return self

    def to_spec(self, label: str) -> ChannelSpec:
        states = None
        num_users = self.num_users
        if self.family == FadingFamily.EXPLICIT:
            rows = self.gains if self.gains is not None else self.gain_vectors
            weights = self.weights or [1.0 / len(rows)] * len(rows)
            key = "gains" if self.gains is not None else "gain_vectors"
            states = [{key: row, "weight": w} for row, w in zip(rows, weights)]
            num_users = len(rows[0])
        return ChannelSpec(
            family=self.family, num_users=num_users, means=self.means, low=self.low, high=self.high,
            states=states, mode=self.mode, num_antennas=self.num_antennas, label=label,
        )


class SystemSection(BaseModel):
    """[system]: noise and budgets."""

    model_config = ConfigDict(extra="forbid")

    noise_variance: float = Field(default=1.0, description="Noise variance sigma^2")
    power_budgets: List[float] = Field(..., description="Average power budget per user")

    @field_validator('power_budgets', mode='before')
    @classmethod
    def parse_row(cls, v):
        return _row(v) if isinstance(v, str) else v

    def to_params(self) -> SystemParams:
        return SystemParams(noise_variance=self.noise_variance, power_budgets=self.power_budgets)


class TaskSection(BaseModel):
    """[task]: task kind and its parameters."""

    model_config = ConfigDict(extra="forbid")

    kind: TaskKind = Field(..., description="Task to run")
    alphas: Optional[List[float]] = Field(None, description="Thresholds; 'inf' for the full D1")
    alpha_count: Optional[int] = Field(None, description="Number of thresholds spread over the distinct partitions")
    mu: Optional[List[float]] = Field(None, description="Rate award of a single-award task")
    mus: Optional[List[List[float]]] = Field(None, description="Rate awards, ';' separated")
    mu_count: Optional[int] = Field(None, description="Size of a (cos t, sin t) fan of rate awards")
    epsilon: float = Field(default=1e-6, description="Tolerance of the epsilon-Stackelberg search")
    alpha_budget: int = Field(default=64, description="Threshold evaluations allowed per search")
    horizon: int = Field(default=50, description="Repeated-game stages")
    payoff_mode: PayoffMode = Field(default=PayoffMode.TIME_AVERAGE, description="Repeated-game payoff")
    discount: Optional[float] = Field(None, description="Discount factor of the discounted payoff")
    deviator: Optional[int] = Field(None, description="1-based user that deviates in the repeated game")
    deviation_stages: List[int] = Field(default_factory=list, description="Stages at which the deviator deviates")
    partitions: int = Field(default=0, description="Random decoding partitions checked by audits")
    partition_seed: int = Field(default=0, description="Seed of the random partitions")
    restarts: int = Field(default=0, description="Random restarts of the optimizers")

    @field_validator('alphas', 'mu', mode='before')
    @classmethod
    def parse_row(cls, v):
        return _row(v) if isinstance(v, str) else v

    @field_validator('mus', mode='before')
    @classmethod
    def parse_rows(cls, v):
        return _rows(v) if isinstance(v, str) else v

    @field_validator('deviation_stages', mode='before')
    @classmethod
    def parse_stages(cls, v):
        if isinstance(v, str):
            return [int(t) for t in v.replace(",", " ").split()]
        return v

    @model_validator(mode='after')
    def validate_task_parameters(self):
        kind = self.kind
        if self.alphas is not None and any(a < 0 for a in self.alphas):
            raise ValueError("alphas must be nonnegative")
        if kind == TaskKind.STACKELBERG_SWEEP and not self.alphas and not self.alpha_count:
            raise ValueError("stackelberg-sweep needs 'alphas' or 'alpha_count'")
        if kind in (TaskKind.EPSILON_STACKELBERG, TaskKind.REPEATED) and self.mu is None:
            raise ValueError(f"{kind.value} needs 'mu'")
        if kind in (TaskKind.CAPACITY_BOUNDARY, TaskKind.AUDIT) and not self.mus and not self.mu_count:
            raise ValueError(f"{kind.value} needs 'mus' or 'mu_count'")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.alpha_budget < 3:
            raise ValueError("alpha_budget must be at least 3")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if self.payoff_mode == PayoffMode.DISCOUNTED and (self.discount is None or not 0 < self.discount < 1):
            raise ValueError("discounted payoff needs 0 < discount < 1")
        if self.deviation_stages and self.deviator is None:
            raise ValueError("deviation_stages need a 'deviator'")
        return self


class SolverSection(BaseModel):
    """[solver]: tolerance overrides; unset values fall back to the environment settings."""

    model_config = ConfigDict(extra="forbid")

    tol: Optional[float] = Field(None, description="Budget residual tolerance")
    tie_tol: Optional[float] = Field(None, description="Score tie tolerance")
    max_iters: Optional[int] = Field(None, description="Outer iteration limit")
    oracle_tol: Optional[float] = Field(None, description="Boundary oracle KKT tolerance")

    @model_validator(mode='after')
    def validate_positive(self):
        for name in ("tol", "tie_tol", "max_iters", "oracle_tol"):
            value = getattr(self, name)
            if value is not None and value <= 0:
                raise ValueError(f"{name} must be positive")
        return self


class Scenario(BaseModel):
    """A validated scenario file."""

    model_config = ConfigDict(extra="forbid")

    name: str = Field(..., description="Scenario name, the file stem")
    channel: ChannelSection
    system: SystemSection
    task: TaskSection
    solver: SolverSection = Field(default_factory=SolverSection)

    @model_validator(mode='after')
    def validate_users(self):
        spec_users = len(self.channel.gains[0]) if self.channel.gains else (
            len(self.channel.gain_vectors[0]) if self.channel.gain_vectors else self.channel.num_users)
        if len(self.system.power_budgets) != spec_users:
            raise ValueError(f"{len(self.system.power_budgets)} power budgets for {spec_users} users")
        vector = self.channel.num_antennas is not None or self.channel.gain_vectors is not None
        if self.task.kind in (TaskKind.VECTOR_NASH, TaskKind.VECTOR_GAP) and not vector:
            raise ValueError(f"{self.task.kind.value} needs a vector channel (num_antennas or gain_vectors)")
        return self

    @property
    def seed(self) -> int:
        override = get_settings().runner.scenario_seed
        return self.channel.seed if override is None else override

    @property
    def tol(self) -> Optional[float]:
        return self.solver.tol

    def build_grid(self) -> ChannelGrid:
        spec = self.channel.to_spec(self.name)
        return build_grid(spec, self.channel.resolution, self.seed,
                          weight_tol=get_settings().solver.grid_weight_tol)

    def params(self) -> SystemParams:
        return self.system.to_params()


def _describe(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"])
        parts.append(f"{location}: {item['msg']}" if location else item["msg"])
    return "; ".join(parts)


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    """Validate INI text as a scenario."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ScenarioConfigError(f"Scenario '{name}' is not valid INI: {e}") from e

    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise ScenarioConfigError(f"Scenario '{name}' has unknown section(s): {', '.join(unknown)}")

    raw: Dict[str, Any] = {"name": name}
    for section in parser.sections():
        raw[section] = dict(parser.items(section))
    try:
        return Scenario(**raw)
    except ValidationError as e:
        raise ScenarioConfigError(f"Scenario '{name}' is invalid: {_describe(e)}") from e


def load_scenario(path: Union[str, Path]) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        logger.error(f"Cannot read scenario {path}: {e}")
        raise ScenarioConfigError(f"Cannot read scenario {path}: {e}") from e
    scenario = parse_scenario(text, name=path.stem)
    logger.info(f"Loaded scenario '{scenario.name}' ({scenario.task.kind.value})")
    return scenario
