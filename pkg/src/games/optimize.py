"""
Projected gradient ascent over per-user average power budgets.

Shared by the weighted-sum capacity oracle and the vector sum-capacity
program. Objectives are expectations over grid states; the gradient passed
in is the per-state marginal utility, i.e. the gradient in the metric
weighted by the state probabilities, so the matching projection is the
weighted projection of `waterfill.project_policy`.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from games.waterfill import project_policy

logger = logging.getLogger(__name__)

# A plain step may lose this much value to rounding and still count as progress
VALUE_RTOL = 64 * np.finfo(float).eps


@dataclass
class AscentConfig:
    """Step and stopping rules."""
    step: float
    tol: float = 1e-8
    max_iters: int = 50000
    check_every: int = 10


@dataclass
class AscentResult:
    """Final iterate and its certificate."""
    powers: np.ndarray
    value: float
    iterations: int
    kkt_residual: float
    converged: bool
    values: List[float] = field(default_factory=list)


def kkt_residual(marginals: np.ndarray, powers: np.ndarray, weights: np.ndarray,
                 budgets: np.ndarray, active_tol: float = 1e-12) -> float:
    """
    Relative KKT residual of max E[f] s.t. E[p_i] <= budget_i, p >= 0.

    With gamma_i the weighted mean marginal over states where user i is
    active, the deviation is |g - gamma| on active states and (g - gamma)^+
    elsewhere. Each state's deviation is scaled by its probability relative
    to the most likely state, so states too unlikely to move the objective
    cannot hold up convergence. The result is scaled by the largest gamma.
    A slack budget forces gamma = 0.
    """
    relevance = weights / weights.max()
    worst = 0.0
    scale = 0.0
    for i in range(powers.shape[1]):
        g = marginals[:, i]
        p = powers[:, i]
        active = p > active_tol
        spent = float(weights @ p)
        if budgets[i] <= 0:
            continue
        if not np.any(active) or spent < budgets[i] * (1 - 1e-9):
            gamma = 0.0
        else:
            gamma = float(weights[active] @ g[active] / weights[active].sum())
        scale = max(scale, gamma, float(np.max(g)))
        deviation = relevance * np.where(active, np.abs(g - gamma), np.maximum(g - gamma, 0.0))
        worst = max(worst, float(np.max(deviation)))
    if scale <= 0:
        return worst
    return worst / scale


def projected_gradient_ascent(objective: Callable[[np.ndarray], float],
                              marginals: Callable[[np.ndarray], np.ndarray],
                              start: np.ndarray, weights: np.ndarray, budgets: np.ndarray,
                              config: AscentConfig) -> AscentResult:
    """
    Accelerated projected gradient ascent with function-value restarts.

    The objective never decreases between accepted iterates: whenever the
    extrapolated step loses value the momentum is dropped and a plain
    projected step from the last iterate is taken instead.
    """
    budgets = np.asarray(budgets, dtype=float)
    x = project_policy(np.asarray(start, dtype=float), weights, budgets)
    value = objective(x)
    y = x.copy()
    t = 1.0
    values = [value]
    residual = kkt_residual(marginals(x), x, weights, budgets)
    iterations = 0

    while iterations < config.max_iters and residual > config.tol:
        iterations += 1
        candidate = project_policy(y + config.step * marginals(y), weights, budgets)
        candidate_value = objective(candidate)

        if candidate_value < value:
            # Restart from the last accepted iterate
            t = 1.0
            candidate = project_policy(x + config.step * marginals(x), weights, budgets)
            candidate_value = objective(candidate)
            if candidate_value < value - VALUE_RTOL * abs(value):
                logger.debug(f"Ascent stalled at iteration {iterations}: value={value:.12g}")
                break
            y = candidate.copy()
        else:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            y = candidate + ((t - 1.0) / t_next) * (candidate - x)
            t = t_next

        x, value = candidate, candidate_value
        if iterations % config.check_every == 0:
            values.append(value)
            residual = kkt_residual(marginals(x), x, weights, budgets)
            logger.debug(f"Ascent iteration {iterations}: value={value:.12g} kkt={residual:.3e}")

    residual = kkt_residual(marginals(x), x, weights, budgets)
    converged = residual <= config.tol
    if not converged:
        logger.warning(f"Projected gradient stopped after {iterations} iterations with KKT residual {residual:.3e}")
    return AscentResult(
        powers=x, value=value, iterations=iterations, kkt_residual=residual,
        converged=converged, values=values,
    )


def random_feasible_start(weights: np.ndarray, budgets: np.ndarray, num_users: int,
                          rng: np.random.Generator) -> np.ndarray:
    """Random nonnegative policy spending every budget exactly."""
    raw = rng.exponential(size=(weights.shape[0], num_users))
    spent = weights @ raw
    return raw * (np.asarray(budgets, dtype=float) / np.where(spent > 0, spent, 1.0))
