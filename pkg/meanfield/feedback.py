"""
Markov feedback catalog.

A feedback maps (t, X, X0) to actions in Γ for a batch of players: X holds
current states, X0 the initial states. Only the counter-example strategy reads
X0; everything else is Markov in (t, x).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .exceptions import ContractViolation
from .model import ActionBox

# t counts as "before the switch" on grid intervals [t_j, t_{j+1}) with t_j < switch
SWITCH_EPS = 1e-12


class MarkovFeedback:
    uses_initial_state = False

    def __call__(self, t: float, X: np.ndarray, X0: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantFeedback(MarkovFeedback):
    action: tuple

    def __post_init__(self):
        object.__setattr__(self, "action", tuple(float(v) for v in self.action))

    def __call__(self, t, X, X0=None):
        X = np.atleast_2d(X)
        return np.broadcast_to(np.array(self.action), X.shape).copy()


@dataclass(frozen=True)
class GridFeedback(MarkovFeedback):
    """
    ũ(t, x) read off a space-time grid.

    Time is piecewise constant on the grid (index nearest to t); space is
    linearly interpolated between nodes, then projected onto Γ.
    """

    times: np.ndarray = field(repr=False)
    axes: tuple = field(repr=False)
    actions: np.ndarray = field(repr=False)  # (n_times, *nodes_per_axis, d)
    action_space: ActionBox

    def _index(self, t: float) -> int:
        dt = self.times[1] - self.times[0]
        return int(min(max(round(t / dt), 0), len(self.times) - 1))

    def __call__(self, t, X, X0=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        slice_ = self.actions[self._index(t)]
        d = slice_.shape[-1]
        if len(self.axes) == 1:
            axis = self.axes[0]
            out = np.stack([np.interp(X[:, 0], axis, slice_[:, k]) for k in range(d)], axis=1)
        else:
            interp = RegularGridInterpolator(self.axes, slice_, bounds_error=False, fill_value=None)
            out = interp(X[:, : len(self.axes)])
        return self.action_space.project(out)


@dataclass(frozen=True)
class CounterexampleFeedback(MarkovFeedback):
    """
    u*(t, φ) = (−1 ∨ φ_k(0) ∧ 1) e_k before the switch time, −e_k afterwards.

    The switch interval is closed on the left grid point only, which agrees with
    the closed interval [0, switch] up to a Lebesgue-null set.
    """

    dim: int = 3
    coordinate: int = 0
    switch_time: float = 1.0

    uses_initial_state = True

    def __call__(self, t, X, X0=None):
        X = np.atleast_2d(X)
        out = np.zeros((X.shape[0], self.dim))
        if t < self.switch_time - SWITCH_EPS:
            if X0 is None:
                raise ContractViolation("The counter-example strategy needs initial states.")
            out[:, self.coordinate] = np.clip(np.atleast_2d(X0)[:, self.coordinate], -1.0, 1.0)
        else:
            out[:, self.coordinate] = -1.0
        return out
