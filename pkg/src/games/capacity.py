"""
Centralized benchmarks on the scalar fading MAC: per-state pentagon, corner
points, the sum-rate point and a weighted-sum boundary oracle.
"""

import logging
import math
from typing import List, Optional, Sequence, Union

import numpy as np

from channel.models import ChannelGrid, FadingState, SystemParams
from config.settings import get_settings
from games.models import (
    BoundaryPoint, DecodingStrategy, EquilibriumReport, InterferenceModel, PentagonConstraints, PowerPolicy,
    RateAward, RateVector, WaterLevels
)
from games.optimize import AscentConfig, projected_gradient_ascent, random_feasible_start
from games.rates import successive_rates
from games.scalar_game import average_rates, check_scalar_inputs, nash_solve, waterfill_response
from games.waterfill import LOG2_SCALE, half_log2

logger = logging.getLogger(__name__)

MuLike = Union[RateAward, Sequence[float]]


def as_rate_award(mu: MuLike) -> RateAward:
    if isinstance(mu, RateAward):
        return mu
    return RateAward(mu=[float(m) for m in mu])


def pentagon(state: FadingState, params: SystemParams, p1: float, p2: float) -> PentagonConstraints:
    """Rate bounds of one two-user state at powers (p1, p2)."""
    if p1 < 0 or p2 < 0:
        raise ValueError(f"Powers must be nonnegative, got ({p1}, {p2})")
    h1, h2 = state.gains[0], state.gains[1]
    sigma2 = params.noise_variance
    return PentagonConstraints(
        r1_max=float(half_log2(h1 * p1 / sigma2)),
        r2_max=float(half_log2(h2 * p2 / sigma2)),
        sum_max=float(half_log2((h1 * p1 + h2 * p2) / sigma2)),
    )


def corner_label(decode_order: Sequence[int]) -> str:
    """CR<k> names the corner where user k is decoded last."""
    return f"CR{decode_order[-1] + 1}"


def corner_point(grid: ChannelGrid, params: SystemParams, decode_order: Sequence[int]) -> EquilibriumReport:
    """
    Sequential water-filling in a fixed decoding order.

    The last decoded user water-fills over the noise; each earlier user
    water-fills over the noise plus everything decoded after it.
    """
    check_scalar_inputs(grid, params)
    order = [int(u) for u in decode_order]
    if sorted(order) != list(range(grid.num_users)):
        raise ValueError(f"{order} is not a decoding order of {grid.num_users} users")

    label = corner_label(order)
    gains = grid.gains
    powers = np.zeros((grid.num_states, grid.num_users))
    levels = np.zeros(grid.num_users)
    interference = np.full(grid.num_states, params.noise_variance)
    try:
        for user in reversed(order):
            levels[user], powers[:, user] = waterfill_response(grid, params, user, interference)
            interference = interference + gains[:, user] * powers[:, user]
    except Exception as e:
        logger.error(f"Error computing corner point {label}: {e}")
        raise

    policy = PowerPolicy(powers=powers)
    strategy = DecodingStrategy.fixed_order(order, grid.num_states)
    rates = RateVector(rates=(grid.weights @ successive_rates(gains, powers, strategy.decoding_orders(grid),
                                                              params.noise_variance)).tolist())
    budgets = np.asarray(params.power_budgets)
    spent = policy.average_powers(grid.weights)
    residuals = np.abs(spent - budgets)
    active = budgets > 0
    return EquilibriumReport(
        label=label,
        levels=WaterLevels(levels=levels.tolist()),
        policy=policy,
        rates=rates,
        residual=float(np.max(residuals[active] / budgets[active])),
        budget_residuals=residuals.tolist(),
        iterations=1,
        converged=True,
        notes=[f"decoding order (first to last): {[u + 1 for u in order]}"],
    )


def single_transmitter_sum_rate(grid: ChannelGrid, params: SystemParams, policy: PowerPolicy) -> float:
    """Sum rate of a time-sharing policy from sum_s w_s sum_i share_i 0.5 log2(1 + h_i P_i / sigma^2)."""
    shares = policy.shares if policy.shares is not None else (policy.powers > 0).astype(float)
    per_state = (shares * half_log2(grid.gains * policy.powers / params.noise_variance)).sum(axis=1)
    return float(grid.weights @ per_state)


def sum_point(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None,
              max_iters: Optional[int] = None) -> EquilibriumReport:
    """Sum-rate point SP: the Nash time-sharing solution labelled as the benchmark."""
    report = nash_solve(grid, params, tol=tol, max_iters=max_iters, label="SP")
    sum_rate = single_transmitter_sum_rate(grid, params, report.policy)
    report.notes.append(f"single-transmitter sum rate {sum_rate:.12g}")
    if abs(sum_rate - report.rates.total) > 1e-9:
        logger.warning(f"SP sum rate mismatch: {sum_rate} vs {report.rates.total}")
    return report


def weighted_objective(gains: np.ndarray, weights: np.ndarray, order: Sequence[int],
                       coefficients: np.ndarray, noise_variance: float):
    """
    Objective and marginals of sum_k c_k 0.5 log2(1 + Z_k / sigma^2), where
    Z_k is the received power of the users at positions k.. of the order.
    """
    order = np.asarray(order, dtype=int)
    ordered_gains = gains[:, order]

    def tails(powers: np.ndarray) -> np.ndarray:
        received = ordered_gains * powers[:, order]
        return np.cumsum(received[:, ::-1], axis=1)[:, ::-1]

    def objective(powers: np.ndarray) -> float:
        per_state = half_log2(tails(powers) / noise_variance) @ coefficients
        return float(weights @ per_state)

    def marginals(powers: np.ndarray) -> np.ndarray:
        inverse = coefficients[None, :] / (noise_variance + tails(powers))
        ordered = LOG2_SCALE * ordered_gains * np.cumsum(inverse, axis=1)
        result = np.empty_like(ordered)
        result[:, order] = ordered
        return result

    return objective, marginals


def _lipschitz(gains: np.ndarray, mu_max: float, noise_variance: float) -> float:
    return mu_max * float(np.max(np.sum(gains ** 2, axis=1))) * LOG2_SCALE / noise_variance ** 2


def boundary_oracle(grid: ChannelGrid, params: SystemParams, mu: MuLike, tol: Optional[float] = None,
                    max_iters: Optional[int] = None, restarts: int = 0, seed: int = 0) -> BoundaryPoint:
    """
    Maximize mu . R over per-state powers under the average budgets.

    Users are decoded in increasing mu order. Equal weights return the
    time-sharing sum-rate point. Otherwise the concave telescoped objective
    is maximized by projected gradient ascent started from the corner in
    the same order; `restarts` extra random feasible starts are run and
    their payoffs reported.
    """
    settings = get_settings().solver
    tol = settings.oracle_tol if tol is None else tol
    max_iters = settings.oracle_max_iters if max_iters is None else max_iters
    award = as_rate_award(mu)
    check_scalar_inputs(grid, params)
    if len(award.mu) != grid.num_users:
        raise ValueError(f"Rate award has {len(award.mu)} weights for {grid.num_users} users")

    weights_mu = award.as_array()
    if np.ptp(weights_mu) <= 1e-12 * weights_mu.max():
        report = sum_point(grid, params)
        return BoundaryPoint(
            mu=award, rates=report.rates, policy=report.policy,
            payoff=report.rates.payoff(award.mu), decoding_order=list(range(grid.num_users)),
            kkt_residual=0.0, iterations=report.iterations, converged=report.converged, source="SP",
        )

    order = [int(u) for u in np.argsort(weights_mu, kind="stable")]
    sorted_mu = weights_mu[order]
    coefficients = np.diff(np.concatenate([[0.0], sorted_mu]))
    objective, marginals = weighted_objective(grid.gains, grid.weights, order, coefficients, params.noise_variance)
    budgets = np.asarray(params.power_budgets, dtype=float)
    config = AscentConfig(step=0.5 / _lipschitz(grid.gains, float(sorted_mu[-1]), params.noise_variance),
                          tol=tol, max_iters=max_iters)

    logger.info(f"Boundary oracle mu={award.mu} on grid '{grid.label}'")
    try:
        initial = corner_point(grid, params, order).policy.powers
        result = projected_gradient_ascent(objective, marginals, initial, grid.weights, budgets, config)

        restart_payoffs: List[float] = []
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            x0 = random_feasible_start(grid.weights, budgets, grid.num_users, rng)
            restart_payoffs.append(projected_gradient_ascent(objective, marginals, x0, grid.weights, budgets,
                                                             config).value)
    except Exception as e:
        logger.error(f"Error in boundary oracle for mu={award.mu}: {e}")
        raise

    strategy = DecodingStrategy.fixed_order(order, grid.num_states)
    policy = PowerPolicy(powers=result.powers)
    rates = average_rates(grid, params, policy, interference_model=InterferenceModel.DECODING,
                          strategy=strategy)
    if not result.converged:
        logger.warning(f"Boundary oracle for mu={award.mu} stopped with KKT residual {result.kkt_residual:.3e}")
    return BoundaryPoint(
        mu=award, rates=rates, policy=policy, payoff=rates.payoff(award.mu), decoding_order=order,
        kkt_residual=result.kkt_residual, iterations=result.iterations, converged=result.converged,
        restart_payoffs=restart_payoffs,
    )


def mu_fan(count: int) -> List[List[float]]:
    """count rate awards (cos t, sin t) for t evenly spaced over [0, pi/2]."""
    if count < 2:
        raise ValueError("A mu fan needs at least 2 directions")
    fan = []
    for k in range(count):
        theta = 0.5 * math.pi * k / (count - 1)
        if k == 0:
            fan.append([1.0, 0.0])
        elif k == count - 1:
            fan.append([0.0, 1.0])
        elif 4 * k == 2 * (count - 1):
            fan.append([1.0, 1.0])
        else:
            fan.append([math.cos(theta), math.sin(theta)])
    return fan


def region_trace(grid: ChannelGrid, params: SystemParams, mus: Union[int, Sequence[Sequence[float]]],
                 tol: Optional[float] = None) -> List[BoundaryPoint]:
    """Boundary points over a fan of rate awards."""
    fan = mu_fan(mus) if isinstance(mus, int) else [list(m) for m in mus]
    return [boundary_oracle(grid, params, mu, tol=tol) for mu in fan]


def dominates(point: BoundaryPoint, rates: Union[RateVector, Sequence[float]], tol: float = 1e-9) -> bool:
    """True when the boundary point's payoff is at least mu . rates (within tol)."""
    values = rates.rates if isinstance(rates, RateVector) else list(rates)
    return point.payoff >= float(np.dot(point.mu.as_array(), values)) - tol
