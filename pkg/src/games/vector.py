"""
Two-user fading MAC with Nr receive antennas.

Each user sends one stream with scalar power P_i(s) along its amplitude
vector h_i(s). Treating the other user as noise, the user's quality on a
state is the effective SNR h_i^T (sigma^2 I + P_j h_j h_j^T)^-1 h_i, which
the rank-one inversion identity gives in closed form. Gain vectors may
carry arbitrary signs; only inner products and outer products enter.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np

from channel.grid import to_scalar_grid
from channel.models import ChannelGrid, SystemParams
from config.settings import get_settings
from games.capacity import corner_label
from games.models import (
    DecodingStrategy, EquilibriumReport, PowerPolicy, RateVector, SumRateAudit, VectorGapReport, WaterLevels
)
from games.optimize import AscentConfig, AscentResult, kkt_residual, projected_gradient_ascent, random_feasible_start
from games.scalar_game import nash_solve_2user, waterfill_response
from games.stackelberg import ADMISSIBLE, low_level_solve, random_partitions
from games.waterfill import LOG2_SCALE, half_log2, waterfill_level, waterfill_powers

logger = logging.getLogger(__name__)


def check_vector_inputs(grid: ChannelGrid, params: SystemParams) -> None:
    if not grid.is_vector:
        raise ValueError(f"Grid '{grid.label}' is a scalar grid; vector solvers need gain vectors")
    if grid.num_users != 2:
        raise ValueError(f"Vector solvers handle two users, got {grid.num_users}")
    if params.num_users != 2:
        raise ValueError(f"{params.num_users} power budgets for a 2-user grid")
    norms = grid.power_gains
    for i, budget in enumerate(params.power_budgets):
        if budget > 0 and not np.any(norms[:, i] > 0):
            raise ValueError(f"User {i + 1} has a zero gain vector on every state; its budget cannot be spent")


def _other(user: int) -> int:
    if user not in (0, 1):
        raise ValueError(f"User index {user} out of range for 2 users")
    return 1 - user


def effective_snr(gain_vectors: np.ndarray, powers: np.ndarray, user: int, noise_variance: float) -> np.ndarray:
    """
    h^T (sigma^2 I + p v v^T)^-1 h with v the other user's vector, from

        |h|^2 / sigma^2 - p (v.h)^2 / (sigma^2 (sigma^2 + p |v|^2))
    """
    other = _other(user)
    h = gain_vectors[:, user, :]
    v = gain_vectors[:, other, :]
    p = powers[:, other]
    sigma2 = noise_variance
    cross = np.einsum("sk,sk->s", v, h)
    correction = p * cross ** 2 / (sigma2 * (sigma2 + p * np.einsum("sk,sk->s", v, v)))
    return np.maximum(np.einsum("sk,sk->s", h, h) / sigma2 - correction, 0.0)


def effective_snr_dense(gain_vectors: np.ndarray, powers: np.ndarray, user: int,
                        noise_variance: float) -> np.ndarray:
    """Same quantity through an explicit linear solve per state."""
    other = _other(user)
    h = gain_vectors[:, user, :]
    v = gain_vectors[:, other, :]
    num_antennas = gain_vectors.shape[2]
    covariance = (noise_variance * np.eye(num_antennas)[None, :, :]
                  + powers[:, other, None, None] * np.einsum("sk,sl->skl", v, v))
    solved = np.linalg.solve(covariance, h[:, :, None])[:, :, 0]
    return np.einsum("sk,sk->s", h, solved)


def _floors(snr: np.ndarray) -> np.ndarray:
    floors = np.full(snr.shape, np.inf)
    positive = snr > 0
    floors[positive] = 1.0 / snr[positive]
    return floors


def _single_stream_rates(grid: ChannelGrid, params: SystemParams, powers: np.ndarray) -> np.ndarray:
    """Per-state rates with the other user as noise, shape (S, 2)."""
    vectors = grid.gain_vectors
    return np.column_stack([
        half_log2(powers[:, i] * effective_snr(vectors, powers, i, params.noise_variance)) for i in range(2)
    ])


def vec_waterfill_response(grid: ChannelGrid, params: SystemParams, user: int,
                           opponent_policy: PowerPolicy) -> Tuple[float, np.ndarray]:
    """
    Water-filling of `user` over 1 / effective SNR against the opponent's powers.

    On single-antenna grids this is the scalar response over
    sigma^2 + P_j h_j.
    """
    check_vector_inputs(grid, params)
    other = _other(user)
    opponent = opponent_policy.effective_powers()
    if opponent.shape != (grid.num_states, 2):
        raise ValueError(f"Opponent policy has shape {opponent.shape}, expected ({grid.num_states}, 2)")

    if grid.num_antennas == 1:
        scalar = to_scalar_grid(grid)
        return waterfill_response(scalar, params, user,
                                  params.noise_variance + scalar.gains[:, other] * opponent[:, other])

    budget = params.power_budgets[user]
    if budget == 0:
        return 0.0, np.zeros(grid.num_states)
    floors = _floors(effective_snr(grid.gain_vectors, opponent, user, params.noise_variance))
    level = waterfill_level(grid.weights, floors, budget)
    return level, waterfill_powers(level, floors)


def sum_capacity_marginals(grid: ChannelGrid, params: SystemParams, powers: np.ndarray) -> np.ndarray:
    """d/dP_i of 0.5 log2 det(I + sum_j P_j h_j h_j^T / sigma^2): LOG2_SCALE h_i^T M^-1 h_i."""
    vectors = grid.gain_vectors
    num_antennas = vectors.shape[2]
    covariance = (params.noise_variance * np.eye(num_antennas)[None, :, :]
                  + np.einsum("sn,snk,snl->skl", powers, vectors, vectors))
    solved = np.linalg.solve(covariance, np.transpose(vectors, (0, 2, 1)))
    return LOG2_SCALE * np.einsum("snk,skn->sn", vectors, solved)


def vec_kkt_residual(grid: ChannelGrid, params: SystemParams, policy: PowerPolicy,
                     levels: Optional[Sequence[float]] = None) -> float:
    """
    KKT residual of a policy against the sum-capacity program.

    With levels the multiplier of user i is 1 / lambda_i and the residual
    is |g lambda - 1| on transmitting states and (g lambda - 1)^+ elsewhere,
    g = h^T (sigma^2 I + sum_j P_j h_j h_j^T)^-1 h. Without levels the
    multipliers are estimated from the transmitting states.
    """
    powers = policy.effective_powers()
    marginals = sum_capacity_marginals(grid, params, powers)
    budgets = np.asarray(params.power_budgets, dtype=float)
    if levels is None:
        return kkt_residual(marginals, powers, grid.weights, budgets)

    worst = 0.0
    for i, level in enumerate(levels):
        if budgets[i] <= 0:
            continue
        scaled = marginals[:, i] / LOG2_SCALE * level - 1.0
        deviation = np.where(powers[:, i] > 0, np.abs(scaled), np.maximum(scaled, 0.0))
        worst = max(worst, float(np.max(deviation)))
    return worst


def vec_sum_capacity(grid: ChannelGrid, params: SystemParams, policy: PowerPolicy) -> float:
    """E[0.5 log2 det(I + sum_i P_i h_i h_i^T / sigma^2)]; time-sharing policies split each state."""
    check_vector_inputs(grid, params)
    vectors = grid.gain_vectors
    sigma2 = params.noise_variance
    if policy.shares is not None:
        per_state = (policy.shares * half_log2(policy.powers * grid.power_gains / sigma2)).sum(axis=1)
        return float(grid.weights @ per_state)
    num_antennas = vectors.shape[2]
    matrix = (np.eye(num_antennas)[None, :, :]
              + np.einsum("sn,snk,snl->skl", policy.powers, vectors, vectors) / sigma2)
    _, logdet = np.linalg.slogdet(matrix)
    return float(grid.weights @ (LOG2_SCALE * logdet))


def _report(label: str, grid: ChannelGrid, params: SystemParams, levels: np.ndarray, powers: np.ndarray,
            rates: np.ndarray, iterations: int, converged: bool, history: List[List[float]],
            notes: List[str], kkt: Optional[float] = None, convention: Optional[str] = None) -> EquilibriumReport:
    budgets = np.asarray(params.power_budgets, dtype=float)
    residuals = np.abs(grid.weights @ powers - budgets)
    active = budgets > 0
    return EquilibriumReport(
        label=label,
        levels=WaterLevels(levels=levels.tolist()),
        policy=PowerPolicy(powers=powers),
        rates=RateVector(rates=(grid.weights @ rates).tolist()),
        residual=float(np.max(residuals[active] / budgets[active])),
        budget_residuals=residuals.tolist(),
        iterations=iterations,
        converged=converged,
        kkt_residual=kkt,
        history=history,
        convention=convention,
        notes=notes,
    )


def vec_nash_solve(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None,
                   max_iters: Optional[int] = None) -> EquilibriumReport:
    """Alternating water-filling until both budgets hold and the sum-capacity KKT residual is below tol."""
    solver = get_settings().solver
    tol = solver.solver_tol if tol is None else tol
    max_iters = solver.max_iters if max_iters is None else max_iters
    check_vector_inputs(grid, params)

    if grid.num_antennas == 1:
        report = nash_solve_2user(to_scalar_grid(grid), params, tol=tol, max_iters=max_iters)
        report.label = "vector nash"
        report.kkt_residual = 0.0
        report.notes.append("single receive antenna: scalar time-sharing equilibrium")
        return report

    budgets = np.asarray(params.power_budgets, dtype=float)
    active = [i for i in range(2) if budgets[i] > 0]
    powers = np.zeros((grid.num_states, 2))
    levels = np.zeros(2)
    history: List[List[float]] = [levels.tolist()]
    kkt = math.inf
    converged = False
    sweeps = 0
    logger.info(f"Solving vector nash on grid '{grid.label}' (Nr={grid.num_antennas}, {grid.num_states} states)")
    try:
        for sweeps in range(1, max_iters + 1):
            for i in active:
                levels[i], powers[:, i] = vec_waterfill_response(grid, params, i, PowerPolicy(powers=powers))
            history.append(levels.tolist())
            kkt = vec_kkt_residual(grid, params, PowerPolicy(powers=powers), levels)
            if kkt <= tol:
                converged = True
                break
    except Exception as e:
        logger.error(f"Error solving vector nash: {e}")
        raise

    if converged:
        logger.info(f"vector nash converged in {sweeps} sweeps, levels={levels.tolist()}")
    else:
        logger.warning(f"vector nash stopped after {sweeps} sweeps with KKT residual {kkt:.3e}")
    return _report("vector nash", grid, params, levels, powers, _single_stream_rates(grid, params, powers),
                   sweeps, converged, history, [], kkt=kkt)


def vec_nash_gap(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None) -> VectorGapReport:
    """Sum capacity of the Nash policy minus the Nash rates earned with the other user as noise."""
    report = vec_nash_solve(grid, params, tol=tol)
    sp_sum_rate = vec_sum_capacity(grid, params, report.policy)
    gap = sp_sum_rate - report.rates.total
    kkt = vec_kkt_residual(grid, params, report.policy) if report.policy.shares is None else 0.0
    logger.info(f"Vector gap on '{grid.label}': {gap:.6g} bits")
    return VectorGapReport(nash_rates=report.rates, sp_sum_rate=sp_sum_rate, gap=gap, kkt_residual=kkt,
                           report=report)


def _successive_rates(grid: ChannelGrid, params: SystemParams, powers: np.ndarray,
                      first: np.ndarray) -> np.ndarray:
    """Per-state rates when user 1 is decoded first where `first` holds, user 2 elsewhere."""
    sigma2 = params.noise_variance
    norms = grid.power_gains
    rates = np.empty((grid.num_states, 2))
    snr = [effective_snr(grid.gain_vectors, powers, i, sigma2) for i in range(2)]
    rates[:, 0] = np.where(first, half_log2(powers[:, 0] * snr[0]), half_log2(powers[:, 0] * norms[:, 0] / sigma2))
    rates[:, 1] = np.where(first, half_log2(powers[:, 1] * norms[:, 1] / sigma2), half_log2(powers[:, 1] * snr[1]))
    return rates


def _decoded_first_floors(grid: ChannelGrid, params: SystemParams, user: int, powers: np.ndarray,
                          first: np.ndarray) -> np.ndarray:
    """1/SNR where `user` is decoded first, sigma^2/|h|^2 where it is decoded last."""
    sigma2 = params.noise_variance
    decoded_first = first if user == 0 else ~first
    clean = _floors(grid.power_gains[:, user] / sigma2)
    interfered = _floors(effective_snr(grid.gain_vectors, powers, user, sigma2))
    return np.where(decoded_first, interfered, clean)


def vec_stackelberg_corners(grid: ChannelGrid, params: SystemParams, strategy: DecodingStrategy,
                            tol: Optional[float] = None, max_iters: Optional[int] = None) -> EquilibriumReport:
    """
    Low-level equilibrium under a decoding partition on a vector grid.

    Where user 1 is decoded first, user 2 water-fills over sigma^2/|h_2|^2
    and user 1 over 1/SNR_1(P_2); mirrored elsewhere. Levels start at zero
    and each sweep re-tightens both budgets.
    """
    solver = get_settings().solver
    tol = solver.solver_tol if tol is None else tol
    max_iters = solver.max_iters if max_iters is None else max_iters
    check_vector_inputs(grid, params)

    if grid.num_antennas == 1:
        report = low_level_solve(to_scalar_grid(grid), params, strategy, tol=tol, max_iters=max_iters)
        report.label = f"vector {report.label}"
        return report

    first = strategy.decode_1_first_mask(grid)
    budgets = np.asarray(params.power_budgets, dtype=float)
    active = [i for i in range(2) if budgets[i] > 0]
    powers = np.zeros((grid.num_states, 2))
    levels = np.zeros(2)
    history: List[List[float]] = [levels.tolist()]
    notes: List[str] = []
    label = f"vector stackelberg {strategy.describe()}"
    converged = False
    sweeps = 0
    try:
        for sweeps in range(1, max_iters + 1):
            for i in active:
                floors = _decoded_first_floors(grid, params, i, powers, first)
                levels[i] = waterfill_level(grid.weights, floors, budgets[i])
                powers[:, i] = waterfill_powers(levels[i], floors)
            history.append(levels.tolist())
            if np.any(np.asarray(history[-1]) < np.asarray(history[-2]) * (1 - 1e-12)):
                notes.append(f"non-monotone iterate at sweep {sweeps}")
            # Budgets of the policy the current levels induce
            induced = np.column_stack([
                waterfill_powers(levels[i], _decoded_first_floors(grid, params, i, powers, first)) for i in range(2)
            ])
            relative = max(abs(float(grid.weights @ induced[:, i]) - budgets[i]) / budgets[i] for i in active)
            if relative <= tol:
                converged = True
                break
    except Exception as e:
        logger.error(f"Error in {label}: {e}")
        raise

    if not converged:
        logger.warning(f"{label} did not converge after {sweeps} sweeps")
    return _report(label, grid, params, levels, powers, _successive_rates(grid, params, powers, first),
                   sweeps, converged, history, notes, convention=ADMISSIBLE)


def vec_corner_point(grid: ChannelGrid, params: SystemParams, decode_order: Sequence[int]) -> EquilibriumReport:
    """Sequential water-filling: the last decoded user over the noise, the first over 1/SNR."""
    check_vector_inputs(grid, params)
    order = [int(u) for u in decode_order]
    if sorted(order) != [0, 1]:
        raise ValueError(f"{order} is not a decoding order of 2 users")
    first_user, last_user = order
    powers = np.zeros((grid.num_states, 2))
    levels = np.zeros(2)
    first = np.full(grid.num_states, first_user == 0)
    for user in (last_user, first_user):
        budget = params.power_budgets[user]
        if budget == 0:
            continue
        floors = _decoded_first_floors(grid, params, user, powers, first)
        levels[user] = waterfill_level(grid.weights, floors, budget)
        powers[:, user] = waterfill_powers(levels[user], floors)
    return _report(corner_label(order), grid, params, levels, powers,
                   _successive_rates(grid, params, powers, first), 1, True, [levels.tolist()],
                   [f"decoding order (first to last): {[u + 1 for u in order]}"])


def _vector_lipschitz(grid: ChannelGrid, params: SystemParams) -> float:
    return float(np.max(np.sum(grid.power_gains ** 2, axis=1))) * LOG2_SCALE / params.noise_variance ** 2


def vec_sum_capacity_optimize(grid: ChannelGrid, params: SystemParams, tol: Optional[float] = None,
                              seed: int = 0, restarts: int = 0,
                              max_iters: Optional[int] = None) -> Tuple[AscentResult, List[float]]:
    """Maximize the expected log-det sum rate over per-state powers; returns the result and restart values."""
    solver = get_settings().solver
    tol = solver.oracle_tol if tol is None else tol
    max_iters = solver.oracle_max_iters if max_iters is None else max_iters
    check_vector_inputs(grid, params)
    budgets = np.asarray(params.power_budgets, dtype=float)

    def objective(powers: np.ndarray) -> float:
        return vec_sum_capacity(grid, params, PowerPolicy(powers=powers))

    def marginals(powers: np.ndarray) -> np.ndarray:
        return sum_capacity_marginals(grid, params, powers)

    config = AscentConfig(step=0.5 / _vector_lipschitz(grid, params), tol=tol, max_iters=max_iters)
    start = np.tile(budgets, (grid.num_states, 1))
    try:
        result = projected_gradient_ascent(objective, marginals, start, grid.weights, budgets, config)
        rng = np.random.default_rng(seed)
        restart_values = [
            projected_gradient_ascent(objective, marginals, random_feasible_start(grid.weights, budgets, 2, rng),
                                      grid.weights, budgets, config).value
            for _ in range(restarts)
        ]
    except Exception as e:
        logger.error(f"Error maximizing the vector sum capacity: {e}")
        raise
    return result, restart_values


def vec_sum_rate_audit(grid: ChannelGrid, params: SystemParams, samples: int, seed: int = 0,
                       tol: Optional[float] = None, restarts: int = 0) -> SumRateAudit:
    """Best equilibrium sum rate over random decoding partitions against the sum capacity."""
    if samples < 1:
        raise ValueError("The audit needs at least one partition")
    optimum, restart_values = vec_sum_capacity_optimize(grid, params, seed=seed, restarts=restarts)
    best = -math.inf
    for strategy in random_partitions(grid, samples, seed):
        report = vec_stackelberg_corners(grid, params, strategy, tol=tol)
        best = max(best, report.rates.total)
    logger.info(f"Vector sum-rate audit on '{grid.label}': optimum {optimum.value:.9g}, best partition {best:.9g}")
    return SumRateAudit(
        optimal_sum_rate=optimum.value,
        best_partition_sum_rate=best,
        partitions_checked=samples,
        gap=optimum.value - best,
        restart_values=restart_values,
    )
