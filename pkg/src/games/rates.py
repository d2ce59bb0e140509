"""
Per-state rate formulas for scalar channels.
"""

import numpy as np

from games.waterfill import half_log2


def noise_rates(gains: np.ndarray, powers: np.ndarray, noise_variance: float) -> np.ndarray:
    """Per-state rates when every other transmission is treated as noise."""
    received = gains * powers
    interference = received.sum(axis=1, keepdims=True) - received
    return half_log2(received / (noise_variance + interference))


def time_sharing_rates(gains: np.ndarray, powers: np.ndarray, shares: np.ndarray,
                       noise_variance: float) -> np.ndarray:
    """Per-state rates when users occupy disjoint fractions of each state."""
    return shares * half_log2(gains * powers / noise_variance)


def successive_rates(gains: np.ndarray, powers: np.ndarray, orders: np.ndarray,
                     noise_variance: float) -> np.ndarray:
    """
    Per-state successive-decoding rates.

    orders[s] lists users from first decoded to last decoded; a user sees
    the signals of every user decoded after it as interference.
    """
    received = np.take_along_axis(gains * powers, orders, axis=1)
    later = np.cumsum(received[:, ::-1], axis=1)[:, ::-1] - received
    ordered_rates = half_log2(received / (noise_variance + later))
    rates = np.empty_like(ordered_rates)
    np.put_along_axis(rates, orders, ordered_rates, axis=1)
    return rates


def successive_interference(gains: np.ndarray, powers: np.ndarray, orders: np.ndarray) -> np.ndarray:
    """Received power of the users decoded after each user, per state."""
    received = np.take_along_axis(gains * powers, orders, axis=1)
    later = np.cumsum(received[:, ::-1], axis=1)[:, ::-1] - received
    result = np.empty_like(later)
    np.put_along_axis(result, orders, later, axis=1)
    return result
