# Games Package

from .models import (
    BoundaryPoint, DecodingStrategy, EquilibriumReport, InterferenceModel, PayoffMode, PowerPolicy,
    RateAward, RateVector, RegimeKind, SolverConvergenceError, StrategyKind, TriggerStrategy, UserBehavior
)
from .scalar_game import nash_solve, nash_solve_2user, nash_solve_nuser, waterfill_response
from .capacity import boundary_oracle, corner_point, pentagon, region_trace, sum_point
from .stackelberg import (
    alpha_sweep, boundary_gap_audit, epsilon_stackelberg, is_admissible, low_level_solve, stackelberg_rates
)
from .repeated import RepeatedGame, min_punishment_length, punishment_plan, simulate
from .vector import (
    vec_nash_gap, vec_nash_solve, vec_stackelberg_corners, vec_sum_capacity, vec_waterfill_response
)

__all__ = [
    'BoundaryPoint', 'DecodingStrategy', 'EquilibriumReport', 'InterferenceModel', 'PayoffMode',
    'PowerPolicy', 'RateAward', 'RateVector', 'RegimeKind', 'SolverConvergenceError', 'StrategyKind',
    'TriggerStrategy', 'UserBehavior',
    'nash_solve', 'nash_solve_2user', 'nash_solve_nuser', 'waterfill_response',
    'boundary_oracle', 'corner_point', 'pentagon', 'region_trace', 'sum_point',
    'alpha_sweep', 'boundary_gap_audit', 'epsilon_stackelberg', 'is_admissible', 'low_level_solve',
    'stackelberg_rates',
    'RepeatedGame', 'min_punishment_length', 'punishment_plan', 'simulate',
    'vec_nash_gap', 'vec_nash_solve', 'vec_stackelberg_corners', 'vec_sum_capacity', 'vec_waterfill_response',
]
