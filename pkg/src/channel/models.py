"""
Channel models: fading states, finite channel grids and system parameters.
"""

import math
from enum import Enum
from typing import Any, Dict, List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, PrivateAttr, field_validator, model_validator


class FadingFamily(str, Enum):
    """Supported fading distribution families."""
    EXPONENTIAL = "exponential"
    UNIFORM = "uniform"
    EXPLICIT = "explicit"


class GridMode(str, Enum):
    """How a continuous fading density is turned into a finite grid."""
    MONTE_CARLO = "monte_carlo"
    QUADRATURE = "quadrature"


class FadingState(BaseModel):
    """One scalar fading state: per-user power gains and its probability mass."""

    gains: List[float] = Field(..., description="Per-user channel power gains h_i (linear scale)")
    weight: float = Field(..., description="Probability mass of the state")

    @field_validator('gains')
    @classmethod
    def validate_gains(cls, v):
        if not v:
            raise ValueError("A fading state needs at least one gain")
        for g in v:
            if not math.isfinite(g) or g < 0:
                raise ValueError(f"Gains must be finite and nonnegative, got {g}")
        return v

    @field_validator('weight')
    @classmethod
    def validate_weight(cls, v):
        if not (0 < v <= 1):
            raise ValueError(f"State weight must be in (0, 1], got {v}")
        return v

    @property
    def num_users(self) -> int:
        return len(self.gains)


class VectorFadingState(BaseModel):
    """One vector fading state: a real amplitude vector of length Nr per user."""

    gain_vectors: List[List[float]] = Field(..., description="Per-user amplitude vectors h_i of length Nr")
    weight: float = Field(..., description="Probability mass of the state")

    @field_validator('gain_vectors')
    @classmethod
    def validate_gain_vectors(cls, v):
        if not v or not v[0]:
            raise ValueError("A vector fading state needs at least one non-empty gain vector")
        num_antennas = len(v[0])
        for vec in v:
            if len(vec) != num_antennas:
                raise ValueError("All gain vectors of a state must have the same length")
            if not all(math.isfinite(x) for x in vec):
                raise ValueError("Gain vector entries must be finite")
        return v

    @field_validator('weight')
    @classmethod
    def validate_weight(cls, v):
        if not (0 < v <= 1):
            raise ValueError(f"State weight must be in (0, 1], got {v}")
        return v

    @property
    def num_users(self) -> int:
        return len(self.gain_vectors)

    @property
    def num_antennas(self) -> int:
        return len(self.gain_vectors[0])


class SystemParams(BaseModel):
    """Noise variance and average power budgets."""

    noise_variance: float = Field(..., description="Receiver noise variance sigma^2")
    power_budgets: List[float] = Field(..., description="Average power budget of each user")

    @field_validator('noise_variance')
    @classmethod
    def validate_noise(cls, v):
        if not (v > 0 and math.isfinite(v)):
            raise ValueError(f"Noise variance must be positive, got {v}")
        return v

    @field_validator('power_budgets')
    @classmethod
    def validate_budgets(cls, v):
        if not v:
            raise ValueError("At least one power budget is required")
        if any(p < 0 or not math.isfinite(p) for p in v):
            raise ValueError(f"Power budgets must be finite and nonnegative, got {v}")
        if not any(p > 0 for p in v):
            raise ValueError("At least one user needs a positive power budget")
        return v

    @property
    def num_users(self) -> int:
        return len(self.power_budgets)

    def scaled(self, factor: float) -> "SystemParams":
        """Same system with noise and budgets multiplied by factor."""
        return SystemParams(
            noise_variance=self.noise_variance * factor,
            power_budgets=[p * factor for p in self.power_budgets],
        )


class ChannelSpec(BaseModel):
    """Descriptor of a fading distribution to discretize."""

    family: FadingFamily = Field(..., description="Fading family")
    num_users: int = Field(default=2, description="Number of users N")
    means: Optional[List[float]] = Field(None, description="Exponential family per-user mean power gains")
    low: Optional[List[float]] = Field(None, description="Uniform family per-user lower bounds")
    high: Optional[List[float]] = Field(None, description="Uniform family per-user upper bounds")
    states: Optional[List[Dict[str, Any]]] = Field(None, description="Explicit state list")
    mode: GridMode = Field(default=GridMode.MONTE_CARLO, description="Discretization mode")
    num_antennas: Optional[int] = Field(None, description="Receive antennas Nr; None for a scalar channel")
    label: str = Field(default="", description="Grid label")

    @model_validator(mode='after')
    def validate_family_parameters(self):
        if self.num_users < 1:
            raise ValueError("num_users must be positive")
        if self.num_antennas is not None and self.num_antennas < 1:
            raise ValueError("num_antennas must be positive")

        if self.family == FadingFamily.EXPONENTIAL:
            if self.means is None or len(self.means) != self.num_users:
                raise ValueError("exponential family needs one mean per user")
            if any(m <= 0 for m in self.means):
                raise ValueError(f"exponential means must be positive, got {self.means}")
        elif self.family == FadingFamily.UNIFORM:
            if self.low is None or self.high is None:
                raise ValueError("uniform family needs low and high bounds")
            if len(self.low) != self.num_users or len(self.high) != self.num_users:
                raise ValueError("uniform family needs one bound pair per user")
            for a, b in zip(self.low, self.high):
                if a < 0 or b <= 0 or a > b:
                    raise ValueError(f"uniform bounds must satisfy 0 <= low <= high, high > 0, got [{a}, {b}]")
        elif self.family == FadingFamily.EXPLICIT:
            if not self.states:
                raise ValueError("explicit family needs a non-empty state list")

        if self.mode == GridMode.QUADRATURE:
            if self.family == FadingFamily.EXPLICIT:
                raise ValueError("quadrature mode does not apply to explicit state lists")
            if self.num_antennas is not None:
                raise ValueError("quadrature mode is only available for scalar channels")
        return self


class ChannelGrid(BaseModel):
    """Finite weighted set of fading states approximating the fading density.

    Grids are treated as immutable: the numpy views exposed by the properties
    are read-only.
    """

    states: List[Union[FadingState, VectorFadingState]] = Field(..., description="Ordered fading states")
    num_users: int = Field(..., description="Number of users N")
    label: str = Field(default="", description="Text identifier")
    weight_tol: float = Field(default=1e-12, description="Tolerance on the sum of weights")

    _weights: np.ndarray = PrivateAttr()
    _gains: np.ndarray = PrivateAttr()

    @model_validator(mode='after')
    def validate_states(self):
        if not self.states:
            raise ValueError("A channel grid needs at least one state")
        vector = isinstance(self.states[0], VectorFadingState)
        for state in self.states:
            if isinstance(state, VectorFadingState) != vector:
                raise ValueError("A grid cannot mix scalar and vector states")
            if state.num_users != self.num_users:
                raise ValueError(f"State has {state.num_users} users, grid declares {self.num_users}")
            if vector and state.num_antennas != self.states[0].num_antennas:
                raise ValueError("All vector states must share the same number of antennas")
        total = math.fsum(s.weight for s in self.states)
        if abs(total - 1.0) > self.weight_tol:
            raise ValueError(f"State weights must sum to 1, got {total!r}")
        return self

    def model_post_init(self, __context):
        weights = np.array([s.weight for s in self.states], dtype=float)
        if self.is_vector:
            gains = np.array([s.gain_vectors for s in self.states], dtype=float)
        else:
            gains = np.array([s.gains for s in self.states], dtype=float)
        weights.flags.writeable = False
        gains.flags.writeable = False
        self._weights = weights
        self._gains = gains

    @property
    def is_vector(self) -> bool:
        return isinstance(self.states[0], VectorFadingState)

    @property
    def num_states(self) -> int:
        return len(self.states)

    @property
    def num_antennas(self) -> int:
        """Receive antennas; 1 for a scalar grid."""
        return self.states[0].num_antennas if self.is_vector else 1

    @property
    def weights(self) -> np.ndarray:
        """State probabilities, shape (S,)."""
        return self._weights

    @property
    def gains(self) -> np.ndarray:
        """Scalar power gains, shape (S, N)."""
        if self.is_vector:
            raise ValueError(f"Grid '{self.label}' is a vector grid; use gain_vectors")
        return self._gains

    @property
    def gain_vectors(self) -> np.ndarray:
        """Amplitude vectors, shape (S, N, Nr)."""
        if not self.is_vector:
            raise ValueError(f"Grid '{self.label}' is a scalar grid; use gains")
        return self._gains

    @property
    def power_gains(self) -> np.ndarray:
        """Per-user received power per unit transmit power, shape (S, N).

        For vector grids this is the squared norm of each gain vector.
        """
        if self.is_vector:
            return np.sum(self._gains ** 2, axis=2)
        return self._gains
