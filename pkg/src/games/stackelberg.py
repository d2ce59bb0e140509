"""
Base-station led Stackelberg game.

The base-station commits to a decoding strategy; the users then play the
low-level water-filling game in which each user sees the users decoded
after it as noise. Starting every water level at zero and re-tightening
each budget in turn gives a non-decreasing sequence of levels whose limit
is the smallest equilibrium, the admissible one.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from channel.grid import grid_from_arrays
from channel.models import ChannelGrid, SystemParams
from config.settings import get_settings
from games.capacity import MuLike, as_rate_award, boundary_oracle, corner_point
from games.models import (
    DecodingStrategy, EquilibriumReport, GapAuditRow, PowerPolicy, RateVector, StackelbergChoice,
    SweepPoint, WaterLevels
)
from games.rates import successive_interference, successive_rates
from games.scalar_game import check_scalar_inputs
from games.waterfill import noise_floors, waterfill_level

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
ADMISSIBLE = "admissible equilibrium"
LAMBDA_ZERO_CONVENTION = "lambda=0-convention equilibrium"
PERTURBED_START = "perturbed-start equilibrium"


def successive_policy(gains: np.ndarray, levels: np.ndarray, orders: np.ndarray,
                      noise_variance: float) -> np.ndarray:
    """
    Low-level best-response powers for given water levels.

    Working back from the last decoded user, each user water-fills over
    the noise plus the received power of the users decoded after it.
    """
    num_states, num_users = gains.shape
    rows = np.arange(num_states)
    powers = np.zeros((num_states, num_users))
    interference = np.full(num_states, float(noise_variance))
    for position in range(num_users - 1, -1, -1):
        users = orders[:, position]
        h = gains[rows, users]
        floors = noise_floors(h, interference)
        p = np.maximum(levels[users] - floors, 0.0)
        powers[rows, users] = p
        interference = interference + h * p
    return powers


def _interference_for(user: int, gains: np.ndarray, levels: np.ndarray, orders: np.ndarray,
                      noise_variance: float) -> np.ndarray:
    """Noise plus the users decoded after `user`; independent of the user's own level."""
    powers = successive_policy(gains, levels, orders, noise_variance)
    return noise_variance + successive_interference(gains, powers, orders)[:, user]


def stackelberg_rates(grid: ChannelGrid, params: SystemParams, strategy: DecodingStrategy,
                      policy: PowerPolicy) -> RateVector:
    """Successive-decoding rates of a policy under a decoding strategy."""
    per_state = successive_rates(grid.power_gains, policy.effective_powers(), strategy.decoding_orders(grid),
                                 params.noise_variance)
    return RateVector(rates=(grid.weights @ per_state).tolist())


def strategy_budget_residuals(grid: ChannelGrid, params: SystemParams, strategy: DecodingStrategy,
                              levels: Sequence[float]) -> np.ndarray:
    """|E[P_i] - budget_i| of the low-level policy the levels induce."""
    powers = successive_policy(grid.power_gains, np.asarray(levels, dtype=float),
                               strategy.decoding_orders(grid), params.noise_variance)
    return np.abs(grid.weights @ powers - np.asarray(params.power_budgets))


def low_level_solve(grid: ChannelGrid, params: SystemParams, strategy: DecodingStrategy,
                    tol: Optional[float] = None, max_iters: Optional[int] = None,
                    initial_levels: Optional[Sequence[float]] = None) -> EquilibriumReport:
    """
    Equilibrium of the users' game under a fixed decoding strategy.

    Each sweep re-tightens every budget in turn by water-filling the user
    over its current interference. From zero levels the iterates are
    non-decreasing; `initial_levels` starts elsewhere for admissibility
    experiments and drops that guarantee.
    """
    solver = get_settings().solver
    tol = solver.solver_tol if tol is None else tol
    max_iters = solver.max_iters if max_iters is None else max_iters
    check_scalar_inputs(grid, params)

    gains = grid.power_gains
    weights = grid.weights
    sigma2 = params.noise_variance
    budgets = np.asarray(params.power_budgets, dtype=float)
    active = [i for i in range(grid.num_users) if budgets[i] > 0]
    orders = strategy.decoding_orders(grid)

    from_zero = initial_levels is None
    levels = np.zeros(grid.num_users) if from_zero else np.array(initial_levels, dtype=float)
    if levels.shape != (grid.num_users,) or np.any(levels < 0):
        raise ValueError(f"Initial levels must be {grid.num_users} nonnegative values")
    if from_zero:
        convention = LAMBDA_ZERO_CONVENTION if grid.num_users > 3 else ADMISSIBLE
    else:
        convention = PERTURBED_START
    label = f"stackelberg {strategy.describe()}"
    history: List[List[float]] = [levels.tolist()]
    notes: List[str] = []

    logger.debug(f"Low-level solve {label} on grid '{grid.label}'")
    converged = False
    relative = math.inf
    sweeps = 0
    try:
        for sweeps in range(1, max_iters + 1):
            for i in active:
                floors = noise_floors(gains[:, i], _interference_for(i, gains, levels, orders, sigma2))
                levels[i] = waterfill_level(weights, floors, budgets[i])
            history.append(levels.tolist())
            if from_zero and np.any(np.asarray(history[-1]) < np.asarray(history[-2]) * (1 - 1e-12)):
                logger.warning(f"{label}: water levels decreased at sweep {sweeps}")
                notes.append(f"non-monotone iterate at sweep {sweeps}")

            residuals = strategy_budget_residuals(grid, params, strategy, levels)
            relative = float(max(residuals[i] / budgets[i] for i in active))
            if relative <= tol:
                converged = True
                break
    except Exception as e:
        logger.error(f"Error in low-level solve {label}: {e}")
        raise

    powers = successive_policy(gains, levels, orders, sigma2)
    policy = PowerPolicy(powers=powers)
    residuals = np.abs(weights @ powers - budgets)
    if not converged:
        logger.warning(f"{label} did not converge after {sweeps} sweeps (relative residual {relative:.3e})")
    return EquilibriumReport(
        label=label,
        levels=WaterLevels(levels=levels.tolist()),
        policy=policy,
        rates=stackelberg_rates(grid, params, strategy, policy),
        residual=relative,
        budget_residuals=residuals.tolist(),
        iterations=sweeps,
        converged=converged,
        history=history,
        convention=convention,
        notes=notes,
    )


def is_monotone(report: EquilibriumReport, rel_tol: float = 1e-12) -> bool:
    """Water-level iterates never decrease."""
    history = np.asarray(report.history)
    if len(history) < 2:
        return True
    return bool(np.all(history[1:] >= history[:-1] * (1 - rel_tol)))


def is_admissible(grid: ChannelGrid, params: SystemParams, strategy: DecodingStrategy,
                  candidate: EquilibriumReport, rival: EquilibriumReport, tol: Optional[float] = None,
                  rate_tol: float = 1e-9) -> bool:
    """
    False iff the rival equilibrium weakly dominates the candidate in every
    rate with at least one strict improvement beyond rate_tol.

    Both reports must be equilibria of the strategy: their levels are
    re-evaluated and must meet every budget within tol.
    """
    tol = get_settings().solver.solver_tol if tol is None else tol
    budgets = np.asarray(params.power_budgets, dtype=float)
    active = budgets > 0
    for name, report in (("candidate", candidate), ("rival", rival)):
        residuals = strategy_budget_residuals(grid, params, strategy, report.levels.levels)
        relative = float(np.max(residuals[active] / budgets[active]))
        if relative > tol:
            raise ValueError(f"{name} is not an equilibrium of {strategy.describe()}: "
                             f"relative budget residual {relative:.3e}")

    c = candidate.rates.as_array()
    r = rival.rates.as_array()
    dominated = bool(np.all(r >= c - rate_tol) and np.any(r > c + rate_tol))

    lc = candidate.levels.as_array()
    lr = rival.levels.as_array()
    if np.all(lr <= lc) and np.any(r < c - rate_tol):
        logger.warning("Smaller water levels gave a smaller rate; level-order check failed")
    if np.all(lc <= lr) and np.any(c < r - rate_tol):
        logger.warning("Candidate has smaller levels but a smaller rate; level-order check failed")
    return not dominated


def sp_alpha(report: EquilibriumReport) -> float:
    """
    Threshold lambda_2 / lambda_1 of the time-sharing point.

    The threshold partition hands every tie state to user 2, so it only
    reproduces the time-sharing rates when report.tie_mass is 0. Use
    sp_partition when the equilibrium shares a state.
    """
    lambda_1, lambda_2 = report.levels.levels[:2]
    if lambda_1 == 0:
        return math.inf
    return lambda_2 / lambda_1


def sp_partition(grid: ChannelGrid, report: EquilibriumReport) -> Tuple[ChannelGrid, DecodingStrategy]:
    """
    Grid and explicit partition whose low-level equilibrium is the time-sharing point.

    Each state shared by both users is split in two by its time shares:
    the part user 1 occupies decodes user 2 first, the rest decodes user 1
    first. The time-sharing water levels then meet every budget of the
    split game with the first decoded user silent on the split states.
    Other states keep the sp_alpha threshold.
    """
    if grid.num_users != 2:
        raise ValueError(f"sp_partition needs a 2-user grid, got {grid.num_users} users")
    policy = report.policy
    if policy.num_states != grid.num_states:
        raise ValueError(f"Report covers {policy.num_states} states, grid has {grid.num_states}")
    base = DecodingStrategy.threshold(sp_alpha(report)).decode_1_first_mask(grid)
    if policy.shares is None:
        return grid, DecodingStrategy.explicit(base)

    shares = policy.shares
    split = (shares[:, 0] > 0) & (shares[:, 1] > 0)
    gains: List[List[float]] = []
    weights: List[float] = []
    decode_1_first: List[bool] = []
    for s in range(grid.num_states):
        h = grid.power_gains[s].tolist()
        w = float(grid.weights[s])
        if not split[s]:
            gains.append(h)
            weights.append(w)
            decode_1_first.append(bool(base[s]))
            continue
        total = float(shares[s, 0] + shares[s, 1])
        gains.extend([h, h])
        weights.extend([w * float(shares[s, 0]) / total, w * float(shares[s, 1]) / total])
        decode_1_first.extend([False, True])

    logger.debug(f"Split {int(split.sum())} shared states of grid '{grid.label}'")
    split_grid = grid_from_arrays(np.asarray(gains), np.asarray(weights), label=f"{grid.label} split",
                                  weight_tol=grid.weight_tol)
    return split_grid, DecodingStrategy.explicit(decode_1_first)


def alpha_sweep(grid: ChannelGrid, params: SystemParams, alphas: Sequence[float],
                tol: Optional[float] = None, max_iters: Optional[int] = None) -> List[SweepPoint]:
    """Low-level equilibria along the threshold family; failures are kept per alpha."""
    if not alphas:
        raise ValueError("alpha_sweep needs at least one alpha")
    return [sweep_point(grid, params, alpha, tol, max_iters) for alpha in alphas]


def sweep_point(grid: ChannelGrid, params: SystemParams, alpha: float, tol: Optional[float] = None,
                max_iters: Optional[int] = None) -> SweepPoint:
    """One entry of a threshold sweep."""
    try:
        report = low_level_solve(grid, params, DecodingStrategy.threshold(alpha), tol=tol, max_iters=max_iters)
    except Exception as e:
        logger.error(f"Sweep point alpha={alpha} failed: {e}")
        return SweepPoint(alpha=alpha, error=str(e))
    point = SweepPoint(alpha=alpha, rates=report.rates, report=report)
    if not report.converged:
        point.error = f"not converged (residual {report.residual:.3e})"
    return point


def candidate_alphas(grid: ChannelGrid) -> List[float]:
    """
    One threshold per distinct partition: 0, every positive gain ratio
    h1/h2 of the grid in increasing order, and inf.
    """
    gains = grid.power_gains
    both = (gains[:, 0] > 0) & (gains[:, 1] > 0)
    ratios = np.unique(gains[both, 0] / gains[both, 1])
    return [0.0] + [float(r) for r in ratios] + [math.inf]


def single_user_rates(grid: ChannelGrid, params: SystemParams) -> RateVector:
    """R_i with user i alone on the channel, the same as being decoded last everywhere."""
    rates = []
    for i in range(grid.num_users):
        order = [j for j in range(grid.num_users) if j != i] + [i]
        rates.append(corner_point(grid, params, order).rates[i])
    return RateVector(rates=rates)


def epsilon_stackelberg(grid: ChannelGrid, params: SystemParams, mu: MuLike, epsilon: float,
                        alpha_budget: int, tol: Optional[float] = None) -> StackelbergChoice:
    """
    Best threshold strategy for the base-station payoff mu . R.

    Every distinct partition is evaluated when alpha_budget allows it;
    otherwise both endpoints are evaluated and a golden-section search
    over the ordered gain ratios spends the remaining budget. The search
    stops early once the payoff is within epsilon of the bound mu . R_o.
    """
    if alpha_budget < 3:
        raise ValueError(f"alpha_budget must be at least 3, got {alpha_budget}")
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if grid.num_users != 2:
        raise ValueError("Threshold strategies need a 2-user grid")
    award = as_rate_award(mu)

    candidates = candidate_alphas(grid)
    upper_bound = single_user_rates(grid, params).payoff(award.mu)
    evaluated: Dict[int, Tuple[float, EquilibriumReport]] = {}

    def payoff(index: int) -> float:
        if index not in evaluated:
            report = low_level_solve(grid, params, DecodingStrategy.threshold(candidates[index]), tol=tol)
            evaluated[index] = (report.rates.payoff(award.mu), report)
        return evaluated[index][0]

    def good_enough() -> bool:
        return max(v[0] for v in evaluated.values()) >= upper_bound - epsilon

    last = len(candidates) - 1
    if len(candidates) <= alpha_budget:
        for index in range(len(candidates)):
            payoff(index)
            if good_enough():
                break
    else:
        payoff(0)
        payoff(last)
        lo, hi = 1, last - 1
        while not good_enough() and len(evaluated) + 2 <= alpha_budget and hi - lo > 2:
            c = hi - int(round(GOLDEN * (hi - lo)))
            d = lo + int(round(GOLDEN * (hi - lo)))
            if c >= d:
                break
            if payoff(c) >= payoff(d):
                hi = d
            else:
                lo = c
        for index in range(lo, hi + 1):
            if len(evaluated) >= alpha_budget or good_enough():
                break
            payoff(index)

    best = max(evaluated, key=lambda k: (evaluated[k][0], -k))
    best_payoff, best_report = evaluated[best]
    logger.info(f"epsilon-Stackelberg mu={award.mu}: alpha={candidates[best]} payoff={best_payoff:.12g} "
                f"bound={upper_bound:.12g} after {len(evaluated)} evaluations")
    return StackelbergChoice(
        mu=award, alpha=candidates[best], rates=best_report.rates, payoff=best_payoff,
        upper_bound=upper_bound, evaluations=len(evaluated), candidates=len(candidates), report=best_report,
    )


def random_partitions(grid: ChannelGrid, count: int, seed: int) -> List[DecodingStrategy]:
    """Reproducible random explicit D1 sets."""
    rng = np.random.default_rng(seed)
    masks = rng.random((count, grid.num_states)) < 0.5
    return [DecodingStrategy.explicit(mask.tolist()) for mask in masks]


def boundary_gap_audit(grid: ChannelGrid, params: SystemParams, mu_list: Sequence[MuLike],
                       tol: Optional[float] = None, alpha_budget: int = 64, epsilon: float = 1e-9,
                       partitions: int = 0, seed: int = 0) -> List[GapAuditRow]:
    """
    Best Stackelberg payoff against the boundary oracle for each mu.

    Random partitions, when requested, widen the search beyond thresholds;
    a finite sample is evidence that no partition reaches the boundary,
    not a proof.
    """
    sampled = []
    if partitions:
        for strategy in random_partitions(grid, partitions, seed):
            report = low_level_solve(grid, params, strategy, tol=tol)
            if report.converged:
                sampled.append(report.rates)

    rows = []
    for mu in mu_list:
        award = as_rate_award(mu)
        try:
            choice = epsilon_stackelberg(grid, params, award, epsilon, alpha_budget, tol=tol)
            oracle = boundary_oracle(grid, params, award)
        except Exception as e:
            logger.error(f"Gap audit failed for mu={award.mu}: {e}")
            raise
        partition_payoff = max((r.payoff(award.mu) for r in sampled), default=None)
        best = choice.payoff if partition_payoff is None else max(choice.payoff, partition_payoff)
        rows.append(GapAuditRow(
            mu=award,
            stackelberg_payoff=best,
            threshold_payoff=choice.payoff,
            partition_payoff=partition_payoff,
            oracle_payoff=oracle.payoff,
            gap=oracle.payoff - best,
            alpha=choice.alpha,
            partitions_checked=len(sampled),
            oracle_converged=oracle.converged,
        ))
    return rows
