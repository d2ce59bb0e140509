"""
Static water-filling game on a scalar fading multiple-access channel.

At the Nash equilibrium every user water-fills over the background noise
on the states where its score lambda_i * h_i is the largest, so the
equilibrium is opportunistic time sharing. States where two or more
scores tie can carry probability mass on a finite grid; they are split
by time-sharing fractions solved together with the water levels.
"""

import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, least_squares

from channel.models import ChannelGrid, SystemParams
from config.settings import get_settings
from games.models import (
    DecodingStrategy, EquilibriumReport, InterferenceModel, PowerPolicy, RateVector, WaterLevels
)
from games.rates import noise_rates, successive_rates, time_sharing_rates
from games.waterfill import noise_floors, waterfill_level, waterfill_powers

logger = logging.getLogger(__name__)

BRENT_RTOL = 4 * np.finfo(float).eps


def _solver_defaults(tol: Optional[float], max_iters: Optional[int],
                     tie_tol: Optional[float]) -> Tuple[float, int, float]:
    solver = get_settings().solver
    return (
        solver.solver_tol if tol is None else tol,
        solver.max_iters if max_iters is None else max_iters,
        solver.tie_tol if tie_tol is None else tie_tol,
    )


def check_scalar_inputs(grid: ChannelGrid, params: SystemParams) -> None:
    if grid.is_vector:
        raise ValueError(f"Grid '{grid.label}' is a vector grid; scalar solvers need scalar gains")
    if params.num_users != grid.num_users:
        raise ValueError(f"{params.num_users} power budgets for a {grid.num_users}-user grid")
    gains = grid.gains
    for i, budget in enumerate(params.power_budgets):
        if budget > 0 and not np.any(gains[:, i] > 0):
            raise ValueError(f"User {i + 1} has zero gain on every state; its budget cannot be spent")


def waterfill_response(grid: ChannelGrid, params: SystemParams, user_index: int,
                       interference: np.ndarray) -> Tuple[float, np.ndarray]:
    """
    Single-user water-filling best response over an effective noise profile.

    Args:
        grid: channel grid
        params: noise variance and power budgets
        user_index: responding user
        interference: per-state effective noise N(s) >= sigma^2

    Returns:
        (level, powers) with powers(s) = (level - N(s)/h(s))^+ spending the budget
    """
    if not 0 <= user_index < grid.num_users:
        raise ValueError(f"User index {user_index} out of range for {grid.num_users} users")
    interference = np.broadcast_to(np.asarray(interference, dtype=float), (grid.num_states,))
    if np.any(interference < params.noise_variance * (1 - 1e-12)):
        raise ValueError("Effective noise cannot be below the noise variance")

    budget = params.power_budgets[user_index]
    if budget == 0:
        return 0.0, np.zeros(grid.num_states)
    gains = grid.power_gains[:, user_index]
    if not np.any(gains > 0):
        raise ValueError(f"User {user_index + 1} has zero gain on every state; its budget cannot be spent")

    floors = noise_floors(gains, interference)
    level = waterfill_level(grid.weights, floors, budget)
    return level, waterfill_powers(level, floors)


def full_powers(gains: np.ndarray, levels: np.ndarray, noise_variance: float) -> np.ndarray:
    """(lambda_i - sigma^2 / h_i)^+ for every state and user, zero where h_i = 0."""
    floors = noise_floors(gains, noise_variance)
    return np.maximum(np.asarray(levels, dtype=float)[None, :] - floors, 0.0)


def _owners(gains: np.ndarray, levels: np.ndarray, powers: np.ndarray, tie_tol: float) -> np.ndarray:
    """Users whose score is within tie_tol of the best score and who have power to send."""
    scores = np.asarray(levels, dtype=float)[None, :] * gains
    top = scores.max(axis=1, keepdims=True)
    return ((top - scores) <= tie_tol * top) & (powers > 0)


def time_sharing_policy(grid: ChannelGrid, params: SystemParams, levels: Sequence[float],
                        tie_tol: Optional[float] = None) -> PowerPolicy:
    """Policy induced by water levels: the best score transmits, ties split evenly."""
    _, _, tie_tol = _solver_defaults(None, None, tie_tol)
    levels = np.asarray(levels, dtype=float)
    full = full_powers(grid.gains, levels, params.noise_variance)
    owners = _owners(grid.gains, levels, full, tie_tol)
    counts = np.maximum(owners.sum(axis=1, keepdims=True), 1)
    return PowerPolicy(
        powers=np.where(owners, full, 0.0),
        shares=np.where(owners, 1.0 / counts, 0.0),
    )


def nash_residual(grid: ChannelGrid, params: SystemParams, levels: Sequence[float],
                  tie_tol: Optional[float] = None) -> np.ndarray:
    """|E[P_i] - budget_i| per user under the time-sharing policy the levels induce."""
    policy = time_sharing_policy(grid, params, levels, tie_tol)
    spent = policy.average_powers(grid.weights)
    return np.abs(spent - np.asarray(params.power_budgets))


def simultaneous_mass(grid: ChannelGrid, policy: PowerPolicy, tol: float = 0.0) -> float:
    """Probability mass of states where two or more users send power above tol."""
    sending = policy.effective_powers() > tol
    return float(grid.weights[sending.sum(axis=1) >= 2].sum())


def average_rates(grid: ChannelGrid, params: SystemParams, policy: PowerPolicy,
                  interference_model: InterferenceModel = InterferenceModel.NOISE,
                  strategy: Optional[DecodingStrategy] = None) -> RateVector:
    """
    Ergodic rates of a policy.

    Under the noise model a time-sharing policy gives each user its
    interference-free rate for its share of the state; otherwise every
    other transmission is noise. The decoding model applies successive
    decoding in the order set by `strategy`.
    """
    gains = grid.power_gains
    sigma2 = params.noise_variance
    if interference_model == InterferenceModel.DECODING:
        if strategy is None:
            raise ValueError("The decoding interference model needs a decoding strategy")
        per_state = successive_rates(gains, policy.effective_powers(), strategy.decoding_orders(grid), sigma2)
    elif policy.shares is not None:
        per_state = time_sharing_rates(gains, policy.powers, policy.shares, sigma2)
    else:
        per_state = noise_rates(gains, policy.powers, sigma2)
    return RateVector(rates=(grid.weights @ per_state).tolist())


def _owned_level(weights: np.ndarray, floors: np.ndarray, owned: np.ndarray, budget: float) -> float:
    """Water level over the states a user owns outright; inf when none of them can take power."""
    usable = owned & np.isfinite(floors) & (weights > 0)
    if not np.any(usable):
        return np.inf
    return waterfill_level(np.where(usable, weights, 0.0), floors, budget)


def _spent(weights: np.ndarray, floors: np.ndarray, mask: np.ndarray, level: float) -> float:
    return float(weights[mask] @ np.maximum(level - floors[mask], 0.0))


def _share_needed(budget: float, spent: float, tied: float) -> float:
    """Fraction of the tie states that tops the spending up to the budget."""
    if tied <= 0:
        return 0.0 if spent >= budget else np.inf
    return (budget - spent) / tied


def _pair_equilibrium(gains: np.ndarray, weights: np.ndarray, noise_variance: float, budgets: np.ndarray,
                      pair: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Exact equilibrium between two positive-budget users.

    The first user owns the states where h_first / h_second exceeds the
    level ratio lambda_second / lambda_first. Between two consecutive
    distinct gain ratios both owned sets are fixed, so each level is a
    single-user water level, and the ratio of those levels only falls as
    the cut moves up. A binary search finds the cut holding the equilibrium
    ratio; when it sits exactly on a gain ratio, the tie states are split
    so that both budgets are met.

    Returns:
        (levels, shares, evaluations) with per-user levels and (S, N) shares
    """
    first, second = pair
    h1, h2 = gains[:, first], gains[:, second]
    floors1 = noise_floors(h1, noise_variance)
    floors2 = noise_floors(h2, noise_variance)
    b1, b2 = float(budgets[first]), float(budgets[second])

    # NaN marks states neither user can use
    ratio = np.full(len(h1), np.nan)
    ratio[(h1 > 0) & (h2 == 0)] = np.inf
    ratio[(h1 == 0) & (h2 > 0)] = 0.0
    both = (h1 > 0) & (h2 > 0)
    ratio[both] = h1[both] / h2[both]
    cuts = np.concatenate([[0.0], np.unique(ratio[both]), [np.inf]])
    evaluations = 0

    def cut_levels(p: int) -> Tuple[float, float]:
        nonlocal evaluations
        evaluations += 1
        return (_owned_level(weights, floors1, ratio > cuts[p], b1),
                _owned_level(weights, floors2, ratio <= cuts[p], b2))

    lo, hi = 0, len(cuts) - 2
    while lo < hi:
        mid = (lo + hi) // 2
        level1, level2 = cut_levels(mid)
        if level2 < cuts[mid + 1] * level1:
            hi = mid
        else:
            lo = mid + 1
    level1, level2 = cut_levels(lo)

    levels = np.zeros(gains.shape[1])
    shares = np.zeros(gains.shape)
    if lo == 0 or level2 >= cuts[lo] * level1:
        levels[first], levels[second] = level1, level2
        shares[ratio > cuts[lo], first] = 1.0
        shares[ratio <= cuts[lo], second] = 1.0
        return levels, shares, evaluations

    v = cuts[lo]
    tie = ratio == v
    own1 = ratio > v
    own2 = ratio < v

    def needed(t: float) -> Tuple[float, float]:
        return (
            _share_needed(b1, _spent(weights, floors1, own1, t), _spent(weights, floors1, tie, t)),
            _share_needed(b2, _spent(weights, floors2, own2, v * t), _spent(weights, floors2, tie, v * t)),
        )

    def excess(t: float) -> float:
        nonlocal evaluations
        evaluations += 1
        s1, s2 = needed(t)
        return s1 + s2 - 1.0

    # Shares of both users lie in [0, 1] exactly on [t_lo, t_hi]
    t_lo = max(_owned_level(weights, floors1, own1 | tie, b1), _owned_level(weights, floors2, own2 | tie, b2) / v)
    t_hi = min(_owned_level(weights, floors1, own1, b1), _owned_level(weights, floors2, own2, b2) / v)
    if not np.isfinite(t_hi):
        # Neither user owns a usable state outright
        t_hi = max(2.0 * t_lo, t_lo + 1.0)
        while excess(t_hi) > 0:
            t_hi *= 2.0

    if t_hi <= t_lo or excess(t_lo) <= 0:
        t = t_lo
    elif excess(t_hi) >= 0:
        t = t_hi
    else:
        t = brentq(excess, t_lo, t_hi, xtol=1e-300, rtol=BRENT_RTOL, maxiter=500)

    share1 = float(np.clip(needed(t)[0], 0.0, 1.0))
    levels[first], levels[second] = t, v * t
    shares[own1, first] = 1.0
    shares[own2, second] = 1.0
    shares[tie, first] = share1
    shares[tie, second] = 1.0 - share1
    logger.debug(f"Users {first + 1} and {second + 1} tie on {int(tie.sum())} states, share {share1:.12g}")
    return levels, shares, evaluations


def _joint_levels(gains: np.ndarray, weights: np.ndarray, noise_variance: float, budgets: np.ndarray,
                  senders: np.ndarray, levels: np.ndarray, start_shares: np.ndarray, tol: float,
                  tie_tol: float) -> Optional[Tuple[np.ndarray, np.ndarray, int]]:
    """
    Levels and tie shares with the sending pattern held fixed.

    A state with one sender is that sender's outright. A state with k
    senders has k - 1 free shares (the last is one minus their sum) and
    k - 1 score equalities. With the pattern frozen the system is smooth
    and square. Returns None unless the solution has shares in [0, 1],
    every sender holds the best score of its state and the budgets are met.
    """
    num_states, num_users = gains.shape
    active = np.flatnonzero(budgets > 0)
    counts = senders.sum(axis=1)
    tie_states = np.flatnonzero(counts >= 2)
    tied = [np.flatnonzero(senders[s]) for s in tie_states]
    outright = np.where(senders & (counts == 1)[:, None], 1.0, 0.0)

    def unpack(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        lv = np.zeros(num_users)
        lv[active] = np.exp(x[:len(active)])
        share = outright.copy()
        offset = len(active)
        for s, users in zip(tie_states, tied):
            free = x[offset:offset + len(users) - 1]
            share[s, users[:-1]] = free
            share[s, users[-1]] = 1.0 - free.sum()
            offset += len(users) - 1
        return lv, share

    def residuals(x: np.ndarray) -> np.ndarray:
        lv, share = unpack(x)
        spent = weights @ (share * full_powers(gains, lv, noise_variance))
        parts = [spent[active] / budgets[active] - 1.0]
        for s, users in zip(tie_states, tied):
            scores = np.log(lv[users] * gains[s, users])
            parts.append(scores[:-1] - scores[1:])
        return np.concatenate(parts)

    x0 = np.concatenate([np.log(levels[active])]
                        + [start_shares[s, users[:-1]] for s, users in zip(tie_states, tied)])
    try:
        solution = least_squares(residuals, x0, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                 max_nfev=200 * (len(x0) + 1))
    except ValueError as e:
        logger.debug(f"Joint level solve failed: {e}")
        return None

    lv, share = unpack(solution.x)
    if not np.all(np.isfinite(solution.x)) or np.any(share < -tie_tol) or np.any(share > 1 + tie_tol):
        return None
    share = np.clip(share, 0.0, 1.0)
    if tie_states.size:
        share[tie_states] /= share[tie_states].sum(axis=1, keepdims=True)

    full = full_powers(gains, lv, noise_variance)
    scores = lv[None, :] * gains
    top = scores.max(axis=1, keepdims=True)
    best = (top - scores) <= tie_tol * top
    if np.any(senders & ~best):
        return None
    # A state nobody sends on must stay below every user's water level
    idle = counts == 0
    if np.any(full[idle][best[idle]] > tie_tol * np.max(lv)):
        return None
    spent = weights @ (share * full)
    if np.max(np.abs(spent[active] / budgets[active] - 1.0)) > tol:
        return None
    return lv, share, int(solution.nfev)


def _iterative_equilibrium(gains: np.ndarray, weights: np.ndarray, noise_variance: float, budgets: np.ndarray,
                           tol: float, max_iters: int,
                           tie_tol: float) -> Tuple[np.ndarray, PowerPolicy, int, List[List[float]], bool]:
    """
    Equilibrium for three or more positive-budget users.

    Sequential water-filling against the received power of the others
    converges to the sum-rate optimum, whose water levels are the
    equilibrium levels and whose superposed tie states map onto time
    shares. Each time the sending pattern holds still for a sweep, the
    levels and shares are solved exactly on that pattern; the first
    validated solution is returned. Otherwise the last iterate is converted
    to a time-sharing policy that spends every budget and is reported as
    unsolved.
    """
    num_states, num_users = gains.shape
    active = np.flatnonzero(budgets > 0)
    powers = np.zeros((num_states, num_users))
    levels = np.zeros(num_users)
    history: List[List[float]] = [levels.tolist()]
    attempted = set()
    pattern = b""
    sweeps = 0

    for sweeps in range(1, max_iters + 1):
        previous = levels.copy()
        for i in active:
            others = noise_variance + (gains * powers).sum(axis=1) - gains[:, i] * powers[:, i]
            floors = noise_floors(gains[:, i], others)
            levels[i] = waterfill_level(weights, floors, budgets[i])
            powers[:, i] = waterfill_powers(levels[i], floors)
        history.append(levels.tolist())

        senders = powers > 0
        settled = np.max(np.abs(levels - previous)) <= BRENT_RTOL * float(levels.max())
        previous_pattern, pattern = pattern, senders.tobytes()
        if pattern not in attempted and (pattern == previous_pattern or settled):
            attempted.add(pattern)
            received = gains * powers
            start_shares = received / np.maximum(received.sum(axis=1, keepdims=True), np.finfo(float).tiny)
            solved = _joint_levels(gains, weights, noise_variance, budgets, senders, levels, start_shares,
                                   tol, tie_tol)
            if solved is not None:
                lv, share, nfev = solved
                history.append(lv.tolist())
                logger.debug(f"Sending pattern solved after {sweeps} sweeps and {len(attempted)} tries "
                             f"({nfev} evaluations)")
                return lv, _policy_from_shares(gains, lv, noise_variance, share), sweeps, history, True
        if settled:
            break

    logger.warning(f"No validated sending pattern after {sweeps} sweeps; keeping the last iterate")
    received = gains * powers
    total = received.sum(axis=1, keepdims=True)
    sending = received > 0
    share = np.where(sending, received / np.where(total > 0, total, 1.0), 0.0)
    alone = np.where(sending, total / np.where(gains > 0, gains, 1.0), 0.0)
    return levels, PowerPolicy(powers=alone, shares=share), sweeps, history, False


def _policy_from_shares(gains: np.ndarray, levels: np.ndarray, noise_variance: float,
                        shares: np.ndarray) -> PowerPolicy:
    full = full_powers(gains, levels, noise_variance)
    shares = np.where(full > 0, shares, 0.0)
    return PowerPolicy(powers=np.where(shares > 0, full, 0.0), shares=shares)


def _equilibrium(grid: ChannelGrid, params: SystemParams, tol: float, max_iters: int,
                 tie_tol: float) -> Tuple[np.ndarray, PowerPolicy, int, List[List[float]], bool]:
    gains = grid.gains
    weights = grid.weights
    sigma2 = params.noise_variance
    budgets = np.asarray(params.power_budgets, dtype=float)
    active = np.flatnonzero(budgets > 0)
    levels = np.zeros(grid.num_users)
    shares = np.zeros(gains.shape)

    if len(active) == 1:
        user = int(active[0])
        levels[user], _ = waterfill_response(grid, params, user, sigma2)
        shares[:, user] = 1.0
        iterations = 1
    elif len(active) == 2:
        levels, shares, iterations = _pair_equilibrium(gains, weights, sigma2, budgets,
                                                       (int(active[0]), int(active[1])))
    elif len(active) > 2:
        return _iterative_equilibrium(gains, weights, sigma2, budgets, tol, max_iters, tie_tol)
    else:
        iterations = 0
    return levels, _policy_from_shares(gains, levels, sigma2, shares), iterations, [levels.tolist()], True


def _solve_time_sharing(grid: ChannelGrid, params: SystemParams, tol: Optional[float],
                        max_iters: Optional[int], tie_tol: Optional[float], label: str) -> EquilibriumReport:
    tol, max_iters, tie_tol = _solver_defaults(tol, max_iters, tie_tol)
    check_scalar_inputs(grid, params)
    budgets = np.asarray(params.power_budgets, dtype=float)
    active = budgets > 0
    logger.info(f"Solving {label} on grid '{grid.label}' ({grid.num_states} states, {grid.num_users} users)")

    try:
        levels, policy, iterations, history, solved = _equilibrium(grid, params, tol, max_iters, tie_tol)
    except Exception as e:
        logger.error(f"Error solving {label}: {e}")
        raise

    notes: List[str] = []
    spent = policy.average_powers(grid.weights)
    budget_residuals = np.abs(spent - budgets)
    relative = float(np.max(budget_residuals[active] / budgets[active])) if np.any(active) else 0.0
    tie_mass = simultaneous_mass(grid, policy)
    converged = solved and relative <= tol
    if tie_mass > 0:
        notes.append(f"tie states carry probability mass {tie_mass:.6g}; shares solved with the levels")
    if not solved:
        notes.append("levels are the last sequential water-filling iterate, not a validated equilibrium")

    rates = average_rates(grid, params, policy)
    report = EquilibriumReport(
        label=label,
        levels=WaterLevels(levels=levels.tolist()),
        policy=policy,
        rates=rates,
        residual=relative,
        budget_residuals=budget_residuals.tolist(),
        iterations=iterations,
        converged=converged,
        tie_mass=tie_mass,
        history=history,
        notes=notes,
    )
    if converged:
        logger.info(f"{label} converged after {iterations} iterations, levels={levels.tolist()}")
    else:
        logger.warning(f"{label} did not converge: relative residual {relative:.3e} after {iterations} iterations")
    return report


def nash_solve_2user(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None,
                     max_iters: Optional[int] = None, tie_tol: Optional[float] = None) -> EquilibriumReport:
    """Nash equilibrium of the two-user water-filling game."""
    if grid.num_users != 2:
        raise ValueError(f"nash_solve_2user needs a 2-user grid, got {grid.num_users} users")
    return _solve_time_sharing(grid, params, tol, max_iters, tie_tol, "nash")


def nash_solve_nuser(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None,
                     max_iters: Optional[int] = None, tie_tol: Optional[float] = None) -> EquilibriumReport:
    """Nash equilibrium for N >= 2 users; on N = 2 it is the two-user solve."""
    if grid.num_users < 2:
        raise ValueError(f"nash_solve_nuser needs at least 2 users, got {grid.num_users}")
    return _solve_time_sharing(grid, params, tol, max_iters, tie_tol, "nash")


def nash_solve(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None,
               max_iters: Optional[int] = None, tie_tol: Optional[float] = None,
               label: str = "nash") -> EquilibriumReport:
    """Nash solve for any user count, including a lone user."""
    return _solve_time_sharing(grid, params, tol, max_iters, tie_tol, label)
