"""
Water-filling primitives.

`waterfill_level` solves sum_s w_s (lambda - floor_s)^+ = budget exactly by
sorting the floors; every best response and the budget projections of the
gradient solvers are built on it.
"""

import numpy as np


LOG2_SCALE = 1.0 / (2.0 * np.log(2.0))


def half_log2(x: np.ndarray) -> np.ndarray:
    """0.5 * log2(1 + x), the rate of a real Gaussian channel at SNR x."""
    return 0.5 * np.log2(1.0 + x)


def waterfill_level(weights: np.ndarray, floors: np.ndarray, budget: float) -> float:
    """
    Water level lambda with sum_s weights_s * (lambda - floors_s)^+ == budget.

    Floors may be negative (used by the budget projection) or +inf for
    states where nothing can be poured. A zero budget returns the lowest
    floor, so every resulting power is zero.
    """
    weights = np.asarray(weights, dtype=float)
    floors = np.asarray(floors, dtype=float)
    if budget < 0:
        raise ValueError(f"Budget must be nonnegative, got {budget}")

    usable = np.isfinite(floors) & (weights > 0)
    if not np.any(usable):
        raise ValueError("No state can receive power: every floor is infinite")

    f = floors[usable]
    w = weights[usable]
    order = np.argsort(f, kind="stable")
    f = f[order]
    w = w[order]

    cum_w = np.cumsum(w)
    cum_wf = np.cumsum(w * f)
    candidates = (budget + cum_wf) / cum_w
    next_floor = np.append(f[1:], np.inf)
    # First active-set size whose level stays below the next floor
    k = int(np.argmax(candidates <= next_floor))
    return float(max(candidates[k], f[k]))


def waterfill_powers(level: float, floors: np.ndarray) -> np.ndarray:
    """Per-state powers (level - floor)^+; infinite floors give zero."""
    floors = np.asarray(floors, dtype=float)
    powers = np.zeros_like(floors)
    finite = np.isfinite(floors)
    powers[finite] = np.maximum(level - floors[finite], 0.0)
    return powers


def noise_floors(gains: np.ndarray, interference: np.ndarray) -> np.ndarray:
    """Effective noise-to-gain ratio N(s)/h(s), +inf where the gain vanishes."""
    gains = np.asarray(gains, dtype=float)
    interference = np.broadcast_to(np.asarray(interference, dtype=float), gains.shape)
    floors = np.full(gains.shape, np.inf)
    positive = gains > 0
    floors[positive] = interference[positive] / gains[positive]
    return floors


def project_onto_budget(values: np.ndarray, weights: np.ndarray, budget: float) -> np.ndarray:
    """
    Weighted Euclidean projection of one user's power column onto
    {p >= 0, sum_s w_s p_s <= budget}.
    """
    clipped = np.maximum(values, 0.0)
    if float(weights @ clipped) <= budget:
        return clipped
    level = waterfill_level(weights, -values, budget)
    return np.maximum(values + level, 0.0)


def project_policy(powers: np.ndarray, weights: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """Project every user column of an (S, N) table onto its budget set."""
    projected = np.empty_like(powers)
    for i in range(powers.shape[1]):
        projected[:, i] = project_onto_budget(powers[:, i], weights, float(budgets[i]))
    return projected
