"""
Repeated game with base-station punishment.

Every stage is one full ergodic block. The users cooperate at a target
boundary point; a detected deviation by user i moves play to the corner
point where user i is decoded first, for T_i stages, after which play
returns to cooperation.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np

from channel.models import ChannelGrid, SystemParams
from config.settings import get_settings
from games.capacity import MuLike, as_rate_award, boundary_oracle, corner_point
from games.models import (
    BoundaryPoint, DecodingStrategy, EquilibriumReport, PayoffMode, PunishmentPlan, RateVector, RegimeKind,
    SimulationResult, StageOutcome, TriggerStrategy, UserBehavior
)
from games.rates import successive_interference, successive_rates
from games.scalar_game import waterfill_response

logger = logging.getLogger(__name__)


def punishment_length(cooperative: float, deviation: float, punished: float) -> int:
    """Smallest T >= 1 with deviation + T * punished < T * cooperative."""
    if cooperative <= punished:
        raise ValueError(
            f"Cooperative rate {cooperative:.6g} does not exceed the punished rate {punished:.6g}; "
            "the target is unachievable by a trigger strategy"
        )
    length = max(1, math.floor(deviation / (cooperative - punished)) + 1)
    while not deviation + length * punished < length * cooperative:
        length += 1
    while length > 1 and deviation + (length - 1) * punished < (length - 1) * cooperative:
        length -= 1
    return length


def window_length(cooperative: float, deviation: float, punished: float) -> int:
    """Smallest T >= 1 with deviation + T * punished < (T + 1) * cooperative."""
    if cooperative <= punished:
        raise ValueError("Punishment has no bite: cooperative rate does not exceed the punished rate")
    length = max(1, math.floor((deviation - cooperative) / (cooperative - punished)) + 1)
    while not deviation + length * punished < (length + 1) * cooperative:
        length += 1
    while length > 1 and deviation + (length - 1) * punished < length * cooperative:
        length -= 1
    return length


class RepeatedGame:
    """
    Stage-game ingredients for a two-user trigger strategy.

    Holds the cooperative boundary point, the decoding order it uses on
    each state and the two punishing corners.
    """

    def __init__(self, grid: ChannelGrid, params: SystemParams, target_mu: MuLike,
                 tol: Optional[float] = None):
        if grid.num_users != 2:
            raise ValueError("The repeated game is defined for two users")
        self.grid = grid
        self.params = params
        self.target_mu = as_rate_award(target_mu)
        self.cooperative: BoundaryPoint = boundary_oracle(grid, params, self.target_mu, tol=tol)
        # User i is punished at the corner where it is decoded first
        self.corners: Dict[int, EquilibriumReport] = {
            0: corner_point(grid, params, [0, 1]),
            1: corner_point(grid, params, [1, 0]),
        }
        self.corner_orders = {
            user: DecodingStrategy.fixed_order(order, grid.num_states).decoding_orders(grid)
            for user, order in ((0, [0, 1]), (1, [1, 0]))
        }
        self.cooperative_orders = self._cooperative_orders()
        logger.info(f"Repeated game at mu={self.target_mu.mu}: cooperative rates {self.cooperative.rates.rates}")

    def _cooperative_orders(self) -> np.ndarray:
        point = self.cooperative
        if point.policy.shares is None:
            return DecodingStrategy.fixed_order(point.decoding_order, self.grid.num_states).decoding_orders(self.grid)
        # Time sharing: the owner of a state is decoded last there
        owner_is_1 = point.policy.shares[:, 0] >= point.policy.shares[:, 1]
        return np.where(owner_is_1[:, None], np.array([[1, 0]]), np.array([[0, 1]]))

    def prescribed(self, regime: RegimeKind, punished: Optional[int]):
        """(powers, orders, rates) the strategy prescribes for a regime."""
        if regime == RegimeKind.COOPERATE:
            return (self.cooperative.policy.effective_powers().copy(), self.cooperative_orders,
                    self.cooperative.rates.as_array())
        corner = self.corners[punished]
        return corner.policy.powers.copy(), self.corner_orders[punished], corner.rates.as_array()

    def best_response(self, user: int, powers: np.ndarray, orders: np.ndarray) -> np.ndarray:
        """Water-filling of `user` over noise plus the users decoded after it."""
        interference = self.params.noise_variance + successive_interference(self.grid.gains, powers, orders)[:, user]
        return waterfill_response(self.grid, self.params, user, interference)[1]

    def stage_rates(self, powers: np.ndarray, orders: np.ndarray) -> np.ndarray:
        return self.grid.weights @ successive_rates(self.grid.gains, powers, orders, self.params.noise_variance)

    def plan(self, deviator: int) -> PunishmentPlan:
        """Rates and punishment lengths against `deviator`."""
        powers, orders, rates = self.prescribed(RegimeKind.COOPERATE, None)
        deviation_powers = self.best_response(deviator, powers, orders)
        powers[:, deviator] = deviation_powers
        deviation_rate = float(self.stage_rates(powers, orders)[deviator])
        cooperative_rate = float(rates[deviator])
        punished_rate = float(self.corners[deviator].rates[deviator])
        corner_rate = float(self.corners[1 - deviator].rates[deviator])
        # The best response can never be worth less than complying
        deviation_rate = max(deviation_rate, cooperative_rate)
        return PunishmentPlan(
            deviator=deviator,
            cooperative_rate=cooperative_rate,
            punished_rate=punished_rate,
            deviation_rate=deviation_rate,
            corner_rate=corner_rate,
            tight_length=punishment_length(cooperative_rate, deviation_rate, punished_rate),
            loose_length=punishment_length(cooperative_rate, corner_rate, punished_rate),
            window_length=window_length(cooperative_rate, deviation_rate, punished_rate),
        )

    def trigger_strategy(self, lengths: Optional[Sequence[int]] = None,
                         detection_tol: Optional[float] = None) -> TriggerStrategy:
        """Trigger strategy with the tight lengths, or the given ones checked against the inequality."""
        plans = [self.plan(user) for user in range(2)]
        return TriggerStrategy(
            target_mu=self.target_mu,
            punishment_lengths=[p.tight_length for p in plans] if lengths is None else list(lengths),
            detection_tol=get_settings().solver.detection_tol if detection_tol is None else detection_tol,
            cooperative_rates=[p.cooperative_rate for p in plans],
            punished_rates=[p.punished_rate for p in plans],
            deviation_rates=[p.deviation_rate for p in plans],
        )


def punishment_plan(grid: ChannelGrid, params: SystemParams, target_mu: MuLike, deviator: int) -> PunishmentPlan:
    return RepeatedGame(grid, params, target_mu).plan(deviator)


def min_punishment_length(grid: ChannelGrid, params: SystemParams, target_mu: MuLike, deviator: int) -> int:
    """
    Smallest T with deviation + T * punished < T * cooperative for the
    deviator, using its best one-shot deviation against the cooperative
    policy under the cooperative decoding order.
    """
    return punishment_plan(grid, params, target_mu, deviator).tight_length


def _aggregate(rates: np.ndarray, mode: PayoffMode, discount: Optional[float]) -> List[float]:
    if mode == PayoffMode.TIME_AVERAGE:
        return [math.fsum(column) / len(column) for column in rates.T]
    factors = discount ** np.arange(rates.shape[0])
    return ((1.0 - discount) * (factors @ rates)).tolist()


def simulate(grid: ChannelGrid, params: SystemParams, strategy: TriggerStrategy,
             user_behaviors: Sequence[UserBehavior], horizon: int,
             payoff_mode: PayoffMode = PayoffMode.TIME_AVERAGE, discount: Optional[float] = None,
             game: Optional[RepeatedGame] = None) -> SimulationResult:
    """
    Play the trigger strategy for `horizon` stages.

    A deviation is detected when the deviator's per-state power profile
    differs from the prescribed one by more than detection_tol relative to
    the larger of its prescribed peak power and its budget. Punishment
    starts at the next stage; a detected deviation during punishment
    restarts it against the new deviator.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be at least 1, got {horizon}")
    if payoff_mode == PayoffMode.DISCOUNTED and (discount is None or not 0 < discount < 1):
        raise ValueError(f"Discounted payoffs need 0 < discount < 1, got {discount}")
    if len(user_behaviors) != grid.num_users:
        raise ValueError(f"{len(user_behaviors)} behaviors for {grid.num_users} users")
    if len(strategy.punishment_lengths) != grid.num_users:
        raise ValueError("One punishment length per user is required")

    game = game or RepeatedGame(grid, params, strategy.target_mu)
    budgets = np.asarray(params.power_budgets, dtype=float)

    regime = RegimeKind.COOPERATE
    punished: Optional[int] = None
    remaining = 0
    outcomes: List[StageOutcome] = []
    stage_rates = np.zeros((horizon, grid.num_users))

    for stage in range(1, horizon + 1):
        deviators = [i for i, behavior in enumerate(user_behaviors) if behavior.deviates(stage)]
        if len(deviators) > 1:
            raise ValueError(f"Simultaneous deviations at stage {stage} are not modeled")

        powers, orders, rates = game.prescribed(regime, punished)
        detected: Optional[int] = None
        if deviators:
            user = deviators[0]
            behavior = user_behaviors[user]
            if behavior.powers is None:
                played = game.best_response(user, powers, orders)
            else:
                played = np.asarray(behavior.powers, dtype=float)
                if played.shape != (grid.num_states,) or np.any(played < 0):
                    raise ValueError(f"Deviation powers of user {user + 1} must be {grid.num_states} nonnegative values")
                if grid.weights @ played > budgets[user] * (1 + 1e-9):
                    raise ValueError(f"Deviation powers of user {user + 1} exceed the power budget")
            scale = max(float(np.max(powers[:, user])), budgets[user])
            if np.max(np.abs(played - powers[:, user])) > strategy.detection_tol * scale:
                detected = user
                powers[:, user] = played
                rates = game.stage_rates(powers, orders)

        stage_rates[stage - 1] = rates
        outcomes.append(StageOutcome(
            stage_index=stage,
            rates=RateVector(rates=[float(r) for r in rates]),
            regime=regime,
            punished_user=punished,
            remaining=remaining,
            deviator=detected,
        ))

        if detected is not None:
            logger.debug(f"Stage {stage}: deviation by user {detected + 1} detected")
            regime, punished, remaining = RegimeKind.PUNISH, detected, strategy.punishment_lengths[detected]
        elif regime == RegimeKind.PUNISH:
            remaining -= 1
            if remaining == 0:
                regime, punished = RegimeKind.COOPERATE, None

    payoffs = _aggregate(stage_rates, payoff_mode, discount)
    logger.info(f"Simulated {horizon} stages ({payoff_mode.value}): payoffs {payoffs}")
    return SimulationResult(outcomes=outcomes, payoffs=payoffs, payoff_mode=payoff_mode, discount=discount)


def cumulative_averages(result: SimulationResult) -> np.ndarray:
    """Running time-average rate per stage and user."""
    rates = np.array([o.rates.rates for o in result.outcomes])
    return np.cumsum(rates, axis=0) / np.arange(1, len(rates) + 1)[:, None]
