"""
Flows of conditional laws on a time grid.

The coefficients see a flow only through m_𝔭(t) = ∫ w d𝔭(t), so a flow is
stored as its survival curve and conditional-mean array; histograms over
space-grid nodes are carried when the flow comes from the forward equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ContractViolation
from .sde import TimeGrid

SURVIVAL_TOL = 1e-9
HISTOGRAM_TOL = 1e-10


@dataclass(frozen=True)
class MeasureFlow:
    grid: TimeGrid
    survival: np.ndarray = field(repr=False)
    means: np.ndarray = field(repr=False)  # (n_steps + 1, d0)
    histograms: np.ndarray | None = field(default=None, repr=False)  # (n_steps + 1, n_nodes)
    nodes: np.ndarray | None = field(default=None, repr=False)  # (n_nodes, d)

    def __post_init__(self):
        n_times = self.grid.n_steps + 1
        survival = np.asarray(self.survival, dtype=float).reshape(n_times)
        means = np.asarray(self.means, dtype=float).reshape(n_times, -1)
        if abs(survival[0] - 1.0) > SURVIVAL_TOL:
            raise ContractViolation(f"Flow survival must start at 1, got {survival[0]}.")
        if np.any(np.diff(survival) > SURVIVAL_TOL):
            raise ContractViolation("Flow survival must be nonincreasing.")
        object.__setattr__(self, "survival", survival)
        object.__setattr__(self, "means", means)
        if self.histograms is not None:
            hist = np.asarray(self.histograms, dtype=float)
            if np.any(np.abs(hist.sum(axis=1) - 1.0) > HISTOGRAM_TOL):
                raise ContractViolation("Flow histograms must be probability vectors.")
            object.__setattr__(self, "histograms", hist)

    @property
    def dim_d0(self) -> int:
        return self.means.shape[1]

    @classmethod
    def constant(cls, grid: TimeGrid, mean, survival=None) -> "MeasureFlow":
        """Flat mean flow; survival defaults to 1 everywhere."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        n_times = grid.n_steps + 1
        surv = np.ones(n_times) if survival is None else survival
        return cls(grid=grid, survival=surv, means=np.tile(mean, (n_times, 1)))

    def with_means(self, means) -> "MeasureFlow":
        return replace(self, means=np.asarray(means, dtype=float))

    def damped_towards(self, other: "MeasureFlow", damping: float) -> "MeasureFlow":
        """(1 − λ)·self + λ·other on the means; survival and histograms follow ``other``."""
        return MeasureFlow(
            grid=self.grid,
            survival=other.survival,
            means=(1.0 - damping) * self.means + damping * other.means,
            histograms=other.histograms,
            nodes=other.nodes,
        )

    def sup_distance(self, other: "MeasureFlow") -> float:
        return float(np.max(np.abs(self.means - other.means)))

    def total_variation(self) -> float:
        """Σ_j |m(t_{j+1}) − m(t_j)| (Euclidean norm per increment)."""
        return float(np.sum(np.linalg.norm(np.diff(self.means, axis=0), axis=1)))

    def bound_violations(self, bound_K: float) -> np.ndarray:
        return np.flatnonzero(np.linalg.norm(self.means, axis=1) > bound_K)
