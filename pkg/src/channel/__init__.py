"""
Fading channel discretization.
"""

from .models import (
    ChannelGrid, ChannelSpec, FadingFamily, FadingState, GridMode, SystemParams, VectorFadingState
)
from .grid import (
    build_grid, dump_grid_csv, expectation, grid_from_arrays, load_grid_csv, permute_users,
    to_scalar_grid, to_vector_grid, vector_grid_from_arrays
)

__all__ = [
    'ChannelGrid', 'ChannelSpec', 'FadingFamily', 'FadingState', 'GridMode', 'SystemParams',
    'VectorFadingState', 'build_grid', 'dump_grid_csv', 'expectation', 'grid_from_arrays',
    'load_grid_csv', 'permute_users', 'to_scalar_grid', 'to_vector_grid', 'vector_grid_from_arrays',
]
