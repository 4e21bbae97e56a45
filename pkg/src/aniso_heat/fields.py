"""Space-time sampled fields shared by the solver and the Hoelder estimator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import check_order
from .errors import ValidationError
from .kernel import SpatialGrid

__all__ = ["SpaceTimeField"]


@dataclass(frozen=True, eq=False)
class SpaceTimeField:
    """Samples of a function of (x, t) on ``grid`` x ``times``.

    Parameters
    ----------
    grid : SpatialGrid
        Spatial lattice (nodes ``-L + j h`` per axis).
    times : array_like
        Strictly increasing, nonnegative.
    values : ndarray
        Shape ``(len(times),) + grid.shape``.
    sigma : float
        Order fixing the space-time metric.
    provenance : str
        Free-form tag such as ``"forcing"``, ``"solution"`` or ``"datum"``.
    time_weights : ndarray, optional
        Quadrature weights attached to ``times`` for time integrals.
    holder : tuple of float, optional
        Declared ``(alpha, seminorm)`` of the sampled function.
    diagnostics : dict
        Solver diagnostics (ladder differences, timings).
    """

    grid: SpatialGrid
    times: np.ndarray
    values: np.ndarray
    sigma: float
    provenance: str = "solution"
    time_weights: np.ndarray | None = None
    holder: tuple[float, float] | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1)
        if times.size == 0:
            raise ValidationError("times: at least one time is required")
        if np.any(np.diff(times) <= 0):
            raise ValidationError("times: must be strictly increasing")
        if times[0] < 0:
            raise ValidationError("times: must be nonnegative")
        values = np.asarray(self.values, dtype=float)
        expected = (times.size,) + self.grid.shape
        if values.shape != expected:
            raise ValidationError(f"values: shape {values.shape} != expected {expected}")
        if not np.all(np.isfinite(values)):
            raise ValidationError("values: must be finite")
        check_order(self.sigma)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.time_weights is not None:
            w = np.asarray(self.time_weights, dtype=float).reshape(-1)
            if w.size != times.size:
                raise ValidationError("time_weights: one weight per time is required")
            object.__setattr__(self, "time_weights", w)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def slice_at(self, k: int) -> np.ndarray:
        return self.values[k]

    def with_values(self, values: np.ndarray, provenance: str | None = None) -> "SpaceTimeField":
        return SpaceTimeField(
            self.grid,
            self.times,
            values,
            self.sigma,
            provenance or self.provenance,
            self.time_weights,
            self.holder,
        )

    def to_rows(self) -> np.ndarray:
        """Rows ``(t, x_1, ..., x_N, value)`` in C order."""
        mesh = np.meshgrid(*([self.grid.axis] * self.dimension), indexing="ij")
        coords = np.stack([m.ravel() for m in mesh], axis=1)
        k = coords.shape[0]
        rows = [
            np.column_stack([np.full(k, t), coords, self.values[i].reshape(-1)])
            for i, t in enumerate(self.times)
        ]
        return np.concatenate(rows)
