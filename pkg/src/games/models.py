"""
Domain models shared by the game solvers: policies, water levels, rates,
decoding strategies and equilibrium reports.
"""

import math
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from channel.models import ChannelGrid


class SolverConvergenceError(RuntimeError):
    """Raised by strict callers when a solve did not reach its tolerance."""


class InterferenceModel(str, Enum):
    """How the receiver treats simultaneous transmissions."""
    NOISE = "everyone-is-noise"
    DECODING = "decoding-strategy"


class StrategyKind(str, Enum):
    """Representations of a base-station decoding strategy."""
    EXPLICIT = "explicit"
    ALPHA_THRESHOLD = "alpha_threshold"
    ORDER = "order"


class WaterLevels(BaseModel):
    """Per-user water levels."""

    levels: List[float] = Field(..., description="Water level lambda_i of each user")

    @field_validator('levels')
    @classmethod
    def validate_levels(cls, v):
        for value in v:
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"Water levels must be finite and nonnegative, got {value}")
        return v

    def as_array(self) -> np.ndarray:
        return np.asarray(self.levels, dtype=float)

    def __getitem__(self, index: int) -> float:
        return self.levels[index]


class RateVector(BaseModel):
    """Per-user ergodic average rates in bits per channel use."""

    rates: List[float] = Field(..., description="Average rate of each user")

    @field_validator('rates')
    @classmethod
    def validate_rates(cls, v):
        for value in v:
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"Rates must be finite and nonnegative, got {value}")
        return v

    def as_array(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    def __getitem__(self, index: int) -> float:
        return self.rates[index]

    @property
    def total(self) -> float:
        return math.fsum(self.rates)

    def payoff(self, mu: Sequence[float]) -> float:
        """Weighted sum mu . rates."""
        return float(np.dot(np.asarray(mu, dtype=float), self.as_array()))


class RateAward(BaseModel):
    """Rate award vector mu of the base-station payoff."""

    mu: List[float] = Field(..., description="Nonnegative per-user weights")

    @field_validator('mu')
    @classmethod
    def validate_mu(cls, v):
        if not v:
            raise ValueError("Rate award needs at least one weight")
        if any(m < 0 or not math.isfinite(m) for m in v):
            raise ValueError(f"Rate award weights must be finite and nonnegative, got {v}")
        if not any(m > 0 for m in v):
            raise ValueError("Rate award weights cannot all be zero")
        return v

    def as_array(self) -> np.ndarray:
        return np.asarray(self.mu, dtype=float)


class PowerPolicy(BaseModel):
    """
    Per-state, per-user transmit power table.

    When `shares` is set the policy is a time-sharing policy: within state s
    user i occupies the fraction shares[s, i] of the state's duration and
    transmits alone at powers[s, i] during it.
    """

    powers: np.ndarray = Field(..., description="Transmit power table, shape (S, N)")
    shares: Optional[np.ndarray] = Field(None, description="Time-sharing fractions, shape (S, N)")

    class Config:
        arbitrary_types_allowed = True

    @field_validator('powers', mode='before')
    @classmethod
    def validate_powers(cls, v):
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if not np.all(np.isfinite(v)):
            raise ValueError("Powers must be finite")
        if np.any(v < 0):
            raise ValueError(f"Powers must be nonnegative, got minimum {v.min()}")
        return v

    @field_validator('shares', mode='before')
    @classmethod
    def validate_shares(cls, v):
        if v is None:
            return v
        v = np.atleast_2d(np.asarray(v, dtype=float))
        if np.any(v < -1e-12) or np.any(v > 1 + 1e-12):
            raise ValueError("Time shares must lie in [0, 1]")
        if np.any(v.sum(axis=1) > 1 + 1e-9):
            raise ValueError("Time shares of a state cannot exceed 1")
        return np.clip(v, 0.0, 1.0)

    @model_validator(mode='after')
    def validate_shapes(self):
        if self.shares is not None and self.shares.shape != self.powers.shape:
            raise ValueError(f"shares shape {self.shares.shape} does not match powers {self.powers.shape}")
        return self

    @classmethod
    def zeros(cls, num_states: int, num_users: int) -> "PowerPolicy":
        return cls(powers=np.zeros((num_states, num_users)))

    @property
    def num_states(self) -> int:
        return self.powers.shape[0]

    @property
    def num_users(self) -> int:
        return self.powers.shape[1]

    @property
    def is_time_sharing(self) -> bool:
        return self.shares is not None

    def effective_powers(self) -> np.ndarray:
        """Duration-averaged power per state and user."""
        if self.shares is None:
            return self.powers
        return self.powers * self.shares

    def average_powers(self, weights: np.ndarray) -> np.ndarray:
        """Per-user average power under the state weights."""
        return weights @ self.effective_powers()


class DecodingStrategy(BaseModel):
    """
    Base-station decoding strategy.

    EXPLICIT carries the set D1 as one boolean per state (True means user 1
    is decoded first). ALPHA_THRESHOLD generates D1 = {h1 <= alpha * h2};
    alpha = inf is the sentinel for "every state". ORDER carries a full
    per-state decoding order for any number of users, first decoded first.
    """

    kind: StrategyKind = Field(..., description="Strategy representation")
    decode_1_first: Optional[List[bool]] = Field(None, description="Per-state membership of D1")
    alpha: Optional[float] = Field(None, description="Threshold of the alpha family")
    orders: Optional[List[List[int]]] = Field(None, description="Per-state decoding order")

    @model_validator(mode='after')
    def validate_kind(self):
        if self.kind == StrategyKind.EXPLICIT and self.decode_1_first is None:
            raise ValueError("explicit strategies need decode_1_first")
        if self.kind == StrategyKind.ALPHA_THRESHOLD:
            if self.alpha is None or math.isnan(self.alpha) or self.alpha < 0:
                raise ValueError(f"alpha must be nonnegative, got {self.alpha}")
        if self.kind == StrategyKind.ORDER:
            if not self.orders:
                raise ValueError("order strategies need a per-state order")
            n = len(self.orders[0])
            for order in self.orders:
                if sorted(order) != list(range(n)):
                    raise ValueError(f"{order} is not a permutation of {n} users")
        return self

    @classmethod
    def threshold(cls, alpha: float) -> "DecodingStrategy":
        return cls(kind=StrategyKind.ALPHA_THRESHOLD, alpha=alpha)

    @classmethod
    def explicit(cls, decode_1_first: Sequence[bool]) -> "DecodingStrategy":
        return cls(kind=StrategyKind.EXPLICIT, decode_1_first=[bool(x) for x in decode_1_first])

    @classmethod
    def fixed_order(cls, order: Sequence[int], num_states: int) -> "DecodingStrategy":
        """Same decoding order on every state."""
        return cls(kind=StrategyKind.ORDER, orders=[list(order) for _ in range(num_states)])

    def describe(self) -> str:
        if self.kind == StrategyKind.ALPHA_THRESHOLD:
            return f"alpha={format_alpha(self.alpha)}"
        if self.kind == StrategyKind.EXPLICIT:
            return f"explicit D1 ({sum(self.decode_1_first)} of {len(self.decode_1_first)} states)"
        return f"order ({len(self.orders)} states)"

    def decode_1_first_mask(self, grid: ChannelGrid) -> np.ndarray:
        """Boolean membership of each grid state in D1."""
        if self.kind == StrategyKind.ORDER:
            return self.decoding_orders(grid)[:, 0] == 0
        if grid.num_users != 2:
            raise ValueError(f"D1 partitions need a 2-user grid, got {grid.num_users} users")
        if self.kind == StrategyKind.EXPLICIT:
            if len(self.decode_1_first) != grid.num_states:
                raise ValueError(
                    f"Strategy covers {len(self.decode_1_first)} states, grid has {grid.num_states}"
                )
            return np.asarray(self.decode_1_first, dtype=bool)
        if self.alpha == 0:
            return np.zeros(grid.num_states, dtype=bool)
        if math.isinf(self.alpha):
            return np.ones(grid.num_states, dtype=bool)
        gains = grid.power_gains
        return gains[:, 0] <= self.alpha * gains[:, 1]

    def decoding_orders(self, grid: ChannelGrid) -> np.ndarray:
        """Per-state decoding order, shape (S, N), first decoded first."""
        if self.kind == StrategyKind.ORDER:
            orders = np.asarray(self.orders, dtype=int)
            if orders.shape != (grid.num_states, grid.num_users):
                raise ValueError(f"Order table has shape {orders.shape}, grid needs "
                                 f"({grid.num_states}, {grid.num_users})")
            return orders
        mask = self.decode_1_first_mask(grid)
        return np.where(mask[:, None], np.array([[0, 1]]), np.array([[1, 0]]))


def format_alpha(alpha: float) -> str:
    return "inf" if math.isinf(alpha) else format(alpha, ".12g")


class EquilibriumReport(BaseModel):
    """Water levels, policy, rates and solver diagnostics of one solve."""

    label: str = Field(default="", description="What was solved")
    levels: WaterLevels = Field(..., description="Water levels")
    policy: PowerPolicy = Field(..., description="Equilibrium power policy")
    rates: RateVector = Field(..., description="Average rates")
    residual: float = Field(..., description="Largest budget residual relative to the budget")
    budget_residuals: List[float] = Field(default_factory=list, description="Absolute per-user budget residuals")
    iterations: int = Field(default=0, description="Outer iterations used")
    converged: bool = Field(default=True, description="Residual reached the tolerance")
    tie_mass: float = Field(default=0.0, description="Probability mass of tie states")
    kkt_residual: Optional[float] = Field(None, description="KKT residual when the solver certifies one")
    history: List[List[float]] = Field(default_factory=list, description="Water level iterates")
    convention: Optional[str] = Field(None, description="Equilibrium selection convention")
    notes: List[str] = Field(default_factory=list, description="Free-form diagnostics")

    class Config:
        arbitrary_types_allowed = True

    @property
    def num_users(self) -> int:
        return len(self.levels.levels)

    def require_converged(self) -> "EquilibriumReport":
        if not self.converged:
            raise SolverConvergenceError(
                f"{self.label or 'solve'} did not converge after {self.iterations} iterations "
                f"(residual {self.residual:.3e})"
            )
        return self


class PentagonConstraints(BaseModel):
    """Per-state rate bounds of the two-user Gaussian MAC for fixed powers."""

    r1_max: float = Field(..., description="Bound on user 1's rate")
    r2_max: float = Field(..., description="Bound on user 2's rate")
    sum_max: float = Field(..., description="Bound on the sum rate")

    @model_validator(mode='after')
    def validate_bounds(self):
        if min(self.r1_max, self.r2_max, self.sum_max) < 0:
            raise ValueError("Pentagon bounds must be nonnegative")
        if self.sum_max > self.r1_max + self.r2_max + 1e-12:
            raise ValueError("Sum bound cannot exceed the sum of the individual bounds")
        return self


class BoundaryPoint(BaseModel):
    """Capacity region boundary point supporting the hyperplane mu . R."""

    mu: RateAward = Field(..., description="Rate award vector")
    rates: RateVector = Field(..., description="Rates at the boundary point")
    policy: PowerPolicy = Field(..., description="Centralized power policy")
    payoff: float = Field(..., description="mu . rates")
    decoding_order: List[int] = Field(default_factory=list, description="Users from first decoded to last")
    kkt_residual: float = Field(default=0.0, description="Relative KKT residual of the weighted-sum program")
    iterations: int = Field(default=0, description="Projected gradient iterations")
    converged: bool = Field(default=True, description="KKT residual reached the tolerance")
    restart_payoffs: List[float] = Field(default_factory=list, description="Payoffs from random restarts")
    source: str = Field(default="oracle", description="How the point was obtained")

    class Config:
        arbitrary_types_allowed = True

    @model_validator(mode='after')
    def validate_payoff(self):
        expected = self.rates.payoff(self.mu.mu)
        if abs(self.payoff - expected) > 1e-12 * max(1.0, abs(expected)):
            raise ValueError(f"Payoff {self.payoff} does not match mu . rates = {expected}")
        return self


class SweepPoint(BaseModel):
    """One alpha of a Stackelberg sweep; failures keep the error text."""

    alpha: float = Field(..., description="Threshold alpha, inf for the full D1")
    rates: Optional[RateVector] = Field(None, description="Equilibrium rates")
    report: Optional[EquilibriumReport] = Field(None, description="Low-level equilibrium")
    error: Optional[str] = Field(None, description="Solver failure for this alpha")

    @property
    def converged(self) -> bool:
        return self.report is not None and self.report.converged


class StackelbergChoice(BaseModel):
    """Best threshold strategy found for a rate award."""

    mu: RateAward = Field(..., description="Rate award vector")
    alpha: float = Field(..., description="Chosen threshold")
    rates: RateVector = Field(..., description="Rates of the chosen threshold")
    payoff: float = Field(..., description="Base-station payoff mu . rates")
    upper_bound: float = Field(..., description="mu . R_o with each user alone")
    evaluations: int = Field(..., description="Thresholds evaluated")
    candidates: int = Field(..., description="Distinct threshold partitions available")
    report: Optional[EquilibriumReport] = Field(None, description="Equilibrium at the chosen threshold")


class GapAuditRow(BaseModel):
    """Stackelberg payoff against the capacity oracle for one rate award."""

    mu: RateAward = Field(..., description="Rate award vector")
    stackelberg_payoff: float = Field(..., description="Best payoff reached by decoding strategies")
    threshold_payoff: float = Field(..., description="Best payoff among threshold strategies")
    partition_payoff: Optional[float] = Field(None, description="Best payoff among random partitions")
    oracle_payoff: float = Field(..., description="Boundary oracle payoff")
    gap: float = Field(..., description="oracle_payoff - stackelberg_payoff")
    alpha: float = Field(..., description="Best threshold")
    partitions_checked: int = Field(default=0, description="Random partitions solved")
    oracle_converged: bool = Field(default=True, description="Oracle reached its KKT tolerance")


class RegimeKind(str, Enum):
    """Stage regime of the trigger strategy."""
    COOPERATE = "cooperate"
    PUNISH = "punish"


class PayoffMode(str, Enum):
    """Repeated-game payoff aggregation."""
    TIME_AVERAGE = "time_average"
    DISCOUNTED = "discounted"


class BehaviorKind(str, Enum):
    """What a user does in the repeated game."""
    COMPLY = "comply"
    DEVIATE = "deviate"


class PunishmentPlan(BaseModel):
    """Ingredients and lengths of the punishment against one deviator."""

    deviator: int = Field(..., description="Zero-based index of the deviating user")
    cooperative_rate: float = Field(..., description="Deviator's rate at the target point")
    punished_rate: float = Field(..., description="Deviator's rate at the punishing corner")
    deviation_rate: float = Field(..., description="Best one-shot deviation rate")
    corner_rate: float = Field(..., description="Deviator's rate when decoded last everywhere")
    tight_length: int = Field(..., description="Length from the deviation rate")
    loose_length: int = Field(..., description="Length from the corner rate")
    window_length: int = Field(..., description="Shortest length making one deviation unprofitable stage by stage")


class TriggerStrategy(BaseModel):
    """Cooperate at a target boundary point, punish detected deviations at a corner."""

    target_mu: RateAward = Field(..., description="Rate award of the cooperative point")
    punishment_lengths: List[int] = Field(..., description="Punishment length T_i per deviating user")
    detection_tol: float = Field(default=1e-6, description="Relative power-profile difference flagged as deviation")
    cooperative_rates: Optional[List[float]] = Field(None, description="Target point rates")
    punished_rates: Optional[List[float]] = Field(None, description="Each user's rate at its punishing corner")
    deviation_rates: Optional[List[float]] = Field(None, description="Each user's deviation rate")

    @field_validator('punishment_lengths')
    @classmethod
    def validate_lengths(cls, v):
        if any(t < 1 for t in v):
            raise ValueError(f"Punishment lengths must be positive, got {v}")
        return v

    @field_validator('detection_tol')
    @classmethod
    def validate_detection_tol(cls, v):
        if v <= 0:
            raise ValueError("detection_tol must be positive")
        return v

    @model_validator(mode='after')
    def validate_inequality(self):
        if self.cooperative_rates is None or self.punished_rates is None or self.deviation_rates is None:
            return self
        for i, length in enumerate(self.punishment_lengths):
            gain = self.deviation_rates[i] + length * self.punished_rates[i]
            if not gain < length * self.cooperative_rates[i]:
                raise ValueError(f"Punishment length {length} for user {i + 1} does not deter deviation")
        return self


class UserBehavior(BaseModel):
    """Comply, or deviate at the listed stages with a policy (best response when omitted)."""

    kind: BehaviorKind = Field(default=BehaviorKind.COMPLY, description="Behavior kind")
    stages: List[int] = Field(default_factory=list, description="Stages (1-based) at which the user deviates")
    powers: Optional[List[float]] = Field(None, description="Per-state deviation powers")

    @field_validator('stages')
    @classmethod
    def validate_stages(cls, v):
        if any(s < 1 for s in v):
            raise ValueError(f"Stages are 1-based, got {v}")
        return sorted(set(v))

    @classmethod
    def comply(cls) -> "UserBehavior":
        return cls()

    @classmethod
    def deviate_at(cls, *stages: int, powers: Optional[Sequence[float]] = None) -> "UserBehavior":
        return cls(kind=BehaviorKind.DEVIATE, stages=list(stages),
                   powers=None if powers is None else [float(p) for p in powers])

    def deviates(self, stage: int) -> bool:
        return self.kind == BehaviorKind.DEVIATE and stage in self.stages


class StageOutcome(BaseModel):
    """Rates and regime of one stage."""

    stage_index: int = Field(..., description="1-based stage number")
    rates: RateVector = Field(..., description="Stage rates")
    regime: RegimeKind = Field(..., description="Regime in force during the stage")
    punished_user: Optional[int] = Field(None, description="Zero-based user being punished")
    remaining: int = Field(default=0, description="Punishment stages left including this one")
    deviator: Optional[int] = Field(None, description="User whose deviation was detected in this stage")

    @field_validator('stage_index')
    @classmethod
    def validate_stage(cls, v):
        if v < 1:
            raise ValueError("stage_index starts at 1")
        return v

    @field_validator('remaining')
    @classmethod
    def validate_remaining(cls, v):
        if v < 0:
            raise ValueError("remaining cannot be negative")
        return v


class SimulationResult(BaseModel):
    """Stage trajectory and aggregated payoffs of a repeated game."""

    outcomes: List[StageOutcome] = Field(..., description="One entry per stage")
    payoffs: List[float] = Field(..., description="Per-user aggregated payoff")
    payoff_mode: PayoffMode = Field(..., description="Aggregation used")
    discount: Optional[float] = Field(None, description="Discount factor in discounted mode")


class VectorGapReport(BaseModel):
    """Vector Nash rates against the sum capacity of the same policy."""

    nash_rates: RateVector = Field(..., description="Nash rates with the other user as noise")
    sp_sum_rate: float = Field(..., description="Successive-decoding sum rate of the Nash policy")
    gap: float = Field(..., description="sp_sum_rate - sum of Nash rates")
    kkt_residual: float = Field(..., description="Nash policy KKT residual against the sum-capacity program")
    report: EquilibriumReport = Field(..., description="Vector Nash solve")


class SumRateAudit(BaseModel):
    """Best decoding-partition sum rate against the optimal sum capacity."""

    optimal_sum_rate: float = Field(..., description="Sum capacity from the projected-gradient optimizer")
    best_partition_sum_rate: float = Field(..., description="Best equilibrium sum rate over sampled partitions")
    partitions_checked: int = Field(..., description="Partitions solved")
    gap: float = Field(..., description="optimal - best partition")
    restart_values: List[float] = Field(default_factory=list, description="Optimizer values from random restarts")
