"""
N-player system with absorption.

Players interact through the renormalized empirical measure π^N(t): the
empirical law of the players still inside O at time t, or δ₀ once everybody
has left. Coupling is explicit in time: the mean at t_j is computed from the
states at t_j and frozen over [t_j, t_{j+1}).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractViolation
from .feedback import ConstantFeedback, CounterexampleFeedback, MarkovFeedback
from .model import CoefficientSet
from .sde import NOT_ABSORBED, PathRecord, TimeGrid, _check_bridge, _has_noise, _run_batch
from .streams import bridge_block, initial_states, noise_block

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------
# Strategy profiles
# ---------------------------------------------------------------------

PROFILE_KINDS = ("symmetric_markov", "symmetric_with_deviation", "counterexample_ustar", "constant_action")


@dataclass(frozen=True)
class StrategyProfile:
    """
    Strategy vector u^N = (u_1, ..., u_N) built from one feedback.

    - ``symmetric_markov``: every player uses ``feedback``
    - ``symmetric_with_deviation``: player 0 uses ``deviation``, the rest ``feedback``
    - ``counterexample_ustar``: every player uses the counter-example strategy u*
    - ``constant_action``: every player plays ``feedback`` = ConstantFeedback
    """

    kind: str
    feedback: MarkovFeedback
    deviation: MarkovFeedback | None = None

    indexed = True

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ContractViolation(f"Unknown strategy profile {self.kind!r}.")
        if self.kind == "symmetric_with_deviation" and self.deviation is None:
            raise ContractViolation("A deviation profile needs the deviating feedback.")

    @classmethod
    def symmetric(cls, feedback: MarkovFeedback) -> "StrategyProfile":
        return cls("symmetric_markov", feedback)

    @classmethod
    def with_deviation(cls, feedback: MarkovFeedback, deviation: MarkovFeedback) -> "StrategyProfile":
        return cls("symmetric_with_deviation", feedback, deviation)

    @classmethod
    def counterexample(cls, dim: int = 3) -> "StrategyProfile":
        return cls("counterexample_ustar", CounterexampleFeedback(dim=dim))

    @classmethod
    def constant(cls, action) -> "StrategyProfile":
        return cls("constant_action", ConstantFeedback(action))

    def __call__(self, t, X, X0, players) -> np.ndarray:
        actions = self.feedback(t, X, X0)
        if self.kind == "symmetric_with_deviation":
            mine = np.flatnonzero(np.asarray(players) == 0)
            if mine.size:
                actions[mine] = self.deviation(t, X[mine], X0[mine])
        return actions


# ---------------------------------------------------------------------
# Ensemble
# ---------------------------------------------------------------------

@dataclass
class Ensemble:
    n_players: int
    grid: TimeGrid
    states: np.ndarray = field(repr=False)  # (n_steps + 1, N, d)
    controls: np.ndarray = field(repr=False)  # (n_steps, N, d)
    absorption: np.ndarray = field(repr=False)  # (N,), NOT_ABSORBED when never
    survivor_counts: np.ndarray = field(repr=False)
    conditional_means: np.ndarray = field(repr=False)
    seed: int = 0
    replication: int = 0

    def absorption_index(self, i: int) -> int | None:
        k = int(self.absorption[i])
        return None if k == NOT_ABSORBED else k

    def stopping_index(self, i: int) -> int:
        k = self.absorption_index(i)
        return self.grid.n_steps if k is None else k

    def alive_mask(self, j: int) -> np.ndarray:
        """Players with j < τ_i (the indicator 1_[0,τ) is open at τ)."""
        return (self.absorption == NOT_ABSORBED) | (self.absorption > j)

    @property
    def paths(self) -> list[PathRecord]:
        out = []
        for i in range(self.n_players):
            k = self.absorption_index(i)
            states = self.states[:, i, :]
            out.append(
                PathRecord(
                    states=states,
                    absorption_index=k,
                    exit_state=states[self.stopping_index(i)].copy(),
                    controls_applied=self.controls[:, i, :],
                )
            )
        return out


def _exact_mean(values: np.ndarray) -> np.ndarray:
    """Column means with exactly rounded sums (independent of player order)."""
    count = values.shape[0]
    return np.array([math.fsum(values[:, k]) / count for k in range(values.shape[1])])


def simulate_nplayer(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    profile: StrategyProfile,
    N: int,
    seed: int,
    replication: int = 0,
    x0=None,
    bridge: bool = False,
) -> Ensemble:
    """
    Simulate the coupled system with initial states i.i.d. from ν.

    Player i draws its initial state and noise from the streams keyed by
    (seed, replication, i). ``x0`` overrides the initial draw (used for
    exhaustive enumeration of finite initial laws).
    """
    if N < 1:
        raise ContractViolation("N must be >= 1.")
    if x0 is None:
        if coeffs.initial_law is None:
            raise ContractViolation("No initial law attached to the coefficient set.")
        x0 = initial_states(coeffs.initial_law, coeffs.domain, seed, replication, range(N))
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape != (N, coeffs.dim_d):
        raise ContractViolation(f"x0 must have shape ({N}, {coeffs.dim_d}).")

    n_times = grid.n_steps + 1
    survivor_counts = np.zeros(n_times, dtype=int)
    conditional_means = np.zeros((n_times, coeffs.dim_d0))
    origin_mean = coeffs.w_at_origin()

    def empirical_mean(j, X, alive):
        count = int(alive.sum())
        survivor_counts[j] = count
        conditional_means[j] = _exact_mean(coeffs.integrand_w(X[alive])) if count else origin_mean
        return conditional_means[j]

    normals = noise_block(seed, replication, range(N), grid.n_steps, coeffs.dim_d) if _has_noise(coeffs) else None
    uniforms = None
    if bridge:
        _check_bridge(coeffs)
        uniforms = bridge_block(seed, replication, range(N), grid.n_steps)
    state = _run_batch(coeffs, grid, profile, empirical_mean, x0, normals, uniforms, record=True)

    ensemble = Ensemble(
        n_players=N,
        grid=grid,
        states=np.stack(state.states),
        controls=np.stack(state.controls),
        absorption=state.absorption,
        survivor_counts=survivor_counts,
        conditional_means=conditional_means,
        seed=seed,
        replication=replication,
    )
    logger.debug(
        "n-player run N=%d replication=%d survivors_T=%d", N, replication, int(survivor_counts[-1])
    )
    return ensemble


def conditional_empirical_mean(ensemble: Ensemble, j: int, coeffs: CoefficientSet | None = None) -> np.ndarray:
    """
    ∫ w dπ^N(t_j): mean of w over survivors, w(0) when none survive.

    Without ``coeffs`` the value recorded during simulation is returned.
    """
    if not 0 <= j <= ensemble.grid.n_steps:
        raise ContractViolation(f"Grid index {j} out of range.")
    if coeffs is None:
        return ensemble.conditional_means[j].copy()
    alive = ensemble.alive_mask(j)
    if not alive.any():
        return coeffs.w_at_origin()
    return _exact_mean(coeffs.integrand_w(ensemble.states[j][alive]))


def cost_J(ensemble: Ensemble, coeffs: CoefficientSet, i: int) -> float:
    """
    Realized cost of player i in one replication.

    Left-endpoint Riemann sum of f up to the stopping index, plus F at the
    stopped state.
    """
    if not 0 <= i < ensemble.n_players:
        raise ContractViolation(f"Player {i} out of range.")
    k = ensemble.stopping_index(i)
    times = ensemble.grid.times
    dt = ensemble.grid.dt
    running = [
        float(
            coeffs.running_cost_f(
                times[j],
                ensemble.states[j, i][None, :],
                ensemble.conditional_means[j],
                ensemble.controls[j, i][None, :],
            )[0]
        )
        * dt
        for j in range(k)
    ]
    terminal = float(coeffs.terminal_cost_F(times[k], ensemble.states[k, i][None, :])[0])
    return math.fsum(running) + terminal


def player_costs(ensemble: Ensemble, coeffs: CoefficientSet) -> np.ndarray:
    return np.array([cost_J(ensemble, coeffs, i) for i in range(ensemble.n_players)])
