"""
Grid construction, expectations and CSV persistence for channel grids.
"""

import csv
import itertools
import logging
import re
from pathlib import Path
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from numpy.polynomial.laguerre import laggauss
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from channel.models import (
    ChannelGrid, ChannelSpec, FadingFamily, FadingState, GridMode, VectorFadingState
)

logger = logging.getLogger(__name__)

StateFunction = Union[Callable[[Union[FadingState, VectorFadingState]], float], Sequence[float], np.ndarray]

_VECTOR_COLUMN = re.compile(r"^h_(\d+)_(\d+)$")


def grid_from_arrays(gains: np.ndarray, weights: np.ndarray, label: str = "",
                     weight_tol: float = 1e-12) -> ChannelGrid:
    """Build a scalar grid from an (S, N) gain table and (S,) weights."""
    gains = np.atleast_2d(np.asarray(gains, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if gains.shape[0] != weights.shape[0]:
        raise ValueError(f"{gains.shape[0]} gain rows but {weights.shape[0]} weights")
    states = [FadingState(gains=row.tolist(), weight=float(w)) for row, w in zip(gains, weights)]
    return ChannelGrid(states=states, num_users=gains.shape[1], label=label, weight_tol=weight_tol)


def vector_grid_from_arrays(gain_vectors: np.ndarray, weights: np.ndarray, label: str = "",
                            weight_tol: float = 1e-12) -> ChannelGrid:
    """Build a vector grid from an (S, N, Nr) amplitude table and (S,) weights."""
    gain_vectors = np.asarray(gain_vectors, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if gain_vectors.ndim != 3:
        raise ValueError(f"Vector gains need shape (S, N, Nr), got {gain_vectors.shape}")
    if gain_vectors.shape[0] != weights.shape[0]:
        raise ValueError(f"{gain_vectors.shape[0]} gain rows but {weights.shape[0]} weights")
    states = [
        VectorFadingState(gain_vectors=block.tolist(), weight=float(w))
        for block, w in zip(gain_vectors, weights)
    ]
    return ChannelGrid(states=states, num_users=gain_vectors.shape[1], label=label, weight_tol=weight_tol)


def to_vector_grid(grid: ChannelGrid) -> ChannelGrid:
    """View a scalar grid as an Nr=1 vector grid with amplitudes sqrt(h)."""
    if grid.is_vector:
        return grid
    return vector_grid_from_arrays(np.sqrt(grid.gains)[:, :, None], grid.weights, label=grid.label,
                                   weight_tol=grid.weight_tol)


def to_scalar_grid(grid: ChannelGrid) -> ChannelGrid:
    """Collapse an Nr=1 vector grid to a scalar grid with h = amplitude squared."""
    if not grid.is_vector:
        return grid
    if grid.num_antennas != 1:
        raise ValueError(f"Only Nr=1 grids reduce to scalar grids, got Nr={grid.num_antennas}")
    return grid_from_arrays(grid.power_gains, grid.weights, label=grid.label, weight_tol=grid.weight_tol)


def permute_users(grid: ChannelGrid, permutation: Sequence[int]) -> ChannelGrid:
    """Relabel users: new user k is old user permutation[k]."""
    perm = list(permutation)
    if sorted(perm) != list(range(grid.num_users)):
        raise ValueError(f"{perm} is not a permutation of {grid.num_users} users")
    if grid.is_vector:
        return vector_grid_from_arrays(grid.gain_vectors[:, perm, :], grid.weights, label=grid.label,
                                       weight_tol=grid.weight_tol)
    return grid_from_arrays(grid.gains[:, perm], grid.weights, label=grid.label, weight_tol=grid.weight_tol)


def _broadcast_users(rng: np.random.Generator, spec: ChannelSpec, size: tuple) -> np.ndarray:
    """Draw a (S, N) or (S, N, Nr) table with user parameters on axis 1."""
    shape = (size[0], spec.num_users) + tuple(size[2:])
    extra = (1,) * (len(shape) - 2)
    if spec.family == FadingFamily.EXPONENTIAL:
        scale = np.asarray(spec.means, dtype=float).reshape((1, -1) + extra)
        return rng.exponential(scale=1.0, size=shape) * scale
    low = np.asarray(spec.low, dtype=float).reshape((1, -1) + extra)
    high = np.asarray(spec.high, dtype=float).reshape((1, -1) + extra)
    return low + (high - low) * rng.random(size=shape)


def _monte_carlo_grid(spec: ChannelSpec, resolution: int, seed: int, weight_tol: float) -> ChannelGrid:
    rng = np.random.default_rng(seed)
    weights = np.full(resolution, 1.0 / resolution)
    if spec.num_antennas is None:
        gains = _broadcast_users(rng, spec, (resolution, spec.num_users))
        return grid_from_arrays(gains, weights, label=spec.label, weight_tol=weight_tol)

    # Entries are amplitudes sqrt(power) with a random sign
    powers = _broadcast_users(rng, spec, (resolution, spec.num_users, spec.num_antennas))
    signs = rng.choice(np.array([-1.0, 1.0]), size=powers.shape)
    return vector_grid_from_arrays(signs * np.sqrt(powers), weights, label=spec.label, weight_tol=weight_tol)


def _quadrature_nodes(spec: ChannelSpec, user: int, resolution: int):
    if spec.family == FadingFamily.EXPONENTIAL:
        x, w = laggauss(resolution)
        return spec.means[user] * x, w
    x, w = leggauss(resolution)
    a, b = spec.low[user], spec.high[user]
    return a + (b - a) * (x + 1.0) / 2.0, w / 2.0


def _quadrature_grid(spec: ChannelSpec, resolution: int, weight_tol: float) -> ChannelGrid:
    per_user = [_quadrature_nodes(spec, i, resolution) for i in range(spec.num_users)]
    combos = np.array(list(itertools.product(range(resolution), repeat=spec.num_users)))
    gains = np.column_stack([per_user[i][0][combos[:, i]] for i in range(spec.num_users)])
    # Product weights of extreme nodes underflow, so they are formed in log space
    with np.errstate(divide="ignore"):
        log_weights = sum(np.log(per_user[i][1])[combos[:, i]] for i in range(spec.num_users))
    weights = np.exp(log_weights - logsumexp(log_weights))

    # States dropped here carry at most weight_tol of probability in total
    keep = weights >= weight_tol / len(weights)
    if not np.all(keep):
        logger.debug(f"Dropped {int((~keep).sum())} of {len(weights)} quadrature states "
                     f"carrying {float(weights[~keep].sum()):.3g} probability")
    weights = weights[keep]
    return grid_from_arrays(gains[keep], weights / weights.sum(), label=spec.label, weight_tol=weight_tol)


def _explicit_grid(spec: ChannelSpec, weight_tol: float) -> ChannelGrid:
    states: List[Union[FadingState, VectorFadingState]] = []
    for entry in spec.states:
        if "gain_vectors" in entry:
            states.append(VectorFadingState(**entry))
        else:
            states.append(FadingState(**entry))
    return ChannelGrid(states=states, num_users=states[0].num_users, label=spec.label, weight_tol=weight_tol)


def build_grid(spec: ChannelSpec, resolution: int, seed: int, weight_tol: float = 1e-12) -> ChannelGrid:
    """
    Discretize a fading distribution into a finite grid.

    Monte Carlo mode draws `resolution` equally weighted states from
    numpy's default generator seeded with `seed`. Quadrature mode takes a
    product of per-user Gauss-Laguerre (exponential) or Gauss-Legendre
    (uniform) rules with `resolution` nodes each. Explicit state lists are
    passed through unchanged.
    """
    if resolution < 1:
        raise ValueError(f"Grid resolution must be at least 1, got {resolution}")
    try:
        if spec.family == FadingFamily.EXPLICIT:
            grid = _explicit_grid(spec, weight_tol)
        elif spec.mode == GridMode.QUADRATURE:
            grid = _quadrature_grid(spec, resolution, weight_tol)
        else:
            grid = _monte_carlo_grid(spec, resolution, seed, weight_tol)
    except Exception as e:
        logger.error(f"Error building {spec.family.value} grid: {e}")
        raise

    logger.debug(f"Built grid '{grid.label}' with {grid.num_states} states and {grid.num_users} users")
    return grid


def expectation(grid: ChannelGrid, f: StateFunction) -> float:
    """Weighted sum over states of f, a per-state callable or a per-state value array."""
    if callable(f):
        values = np.array([f(state) for state in grid.states], dtype=float)
    else:
        values = np.asarray(f, dtype=float)
    if values.shape != (grid.num_states,):
        raise ValueError(f"Expected {grid.num_states} per-state values, got shape {values.shape}")
    return float(np.dot(grid.weights, values))


def grid_header(grid: ChannelGrid) -> List[str]:
    header = ["state_index", "weight"]
    if grid.is_vector:
        header += [f"h_{k + 1}_{i + 1}" for i in range(grid.num_users) for k in range(grid.num_antennas)]
    else:
        header += [f"h_{i + 1}" for i in range(grid.num_users)]
    return header


def dump_grid_csv(grid: ChannelGrid, path: Union[str, Path]) -> Path:
    """Write a grid as CSV. Values use 17 significant digits so reloading is lossless."""
    path = Path(path)
    values = grid.gain_vectors.reshape(grid.num_states, -1) if grid.is_vector else grid.gains
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(grid_header(grid))
        for s in range(grid.num_states):
            writer.writerow([s, format(grid.weights[s], ".17g")] + [format(v, ".17g") for v in values[s]])
    return path


def load_grid_csv(path: Union[str, Path], label: Optional[str] = None, weight_tol: float = 1e-12) -> ChannelGrid:
    """Read a grid written by dump_grid_csv."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader)
        rows = [row for row in reader if row]

    if header[:2] != ["state_index", "weight"]:
        raise ValueError(f"{path}: header must start with state_index,weight")
    columns = header[2:]
    table = np.array([[float(x) for x in row[2:]] for row in rows], dtype=float)
    weights = np.array([float(row[1]) for row in rows], dtype=float)
    label = label if label is not None else path.stem

    matches = [_VECTOR_COLUMN.match(c) for c in columns]
    if all(matches):
        num_antennas = max(int(m.group(1)) for m in matches)
        num_users = max(int(m.group(2)) for m in matches)
        return vector_grid_from_arrays(table.reshape(len(rows), num_users, num_antennas), weights,
                                       label=label, weight_tol=weight_tol)
    return grid_from_arrays(table, weights, label=label, weight_tol=weight_tol)
