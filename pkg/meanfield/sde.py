"""
Euler–Maruyama integration of the controlled state equation with absorption
at the first grid node outside O.

The flow of measures enters only through its conditional-mean array
``mflow.means`` (shape (n_steps + 1, d0)); it is frozen during a simulation.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .catalog import rows_matvec
from .conf import solver_setting
from .exceptions import ContractViolation, NumericalError
from .model import CoefficientSet
from .streams import bridge_block, noise_block

logger = logging.getLogger(__name__)

NOT_ABSORBED = -1


# ---------------------------------------------------------------------
# Time grid
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class TimeGrid:
    n_steps: int
    horizon: float

    def __post_init__(self):
        if int(self.n_steps) < 1:
            raise ContractViolation("n_steps must be a positive integer.")
        if self.horizon <= 0:
            raise ContractViolation("horizon must be positive.")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    def index_of(self, t: float) -> int:
        return int(min(max(round(t / self.dt), 0), self.n_steps))


@dataclass
class PathRecord:
    states: np.ndarray
    absorption_index: int | None
    exit_state: np.ndarray
    controls_applied: np.ndarray

    @property
    def absorbed(self) -> bool:
        return self.absorption_index is not None

    @property
    def stopping_index(self) -> int:
        """Grid index of τ ∧ T."""
        return self.absorption_index if self.absorption_index is not None else self.states.shape[0] - 1


# ---------------------------------------------------------------------
# One Euler step
# ---------------------------------------------------------------------

def _advance(coeffs: CoefficientSet, t: float, X, m, G, dt: float, XI) -> np.ndarray:
    out = X + coeffs.drift(t, X, m, G) * dt
    if XI is not None:
        out = out + rows_matvec(coeffs.sigma, XI) * math.sqrt(dt)
    return out


def _has_noise(coeffs: CoefficientSet) -> bool:
    return bool(np.any(coeffs.sigma != 0.0))


def step(coeffs: CoefficientSet, t: float, x, m, gamma, dt: float, xi) -> np.ndarray:
    """x' = x + (γ + b̄(t, x, m))·dt + σ·√dt·ξ."""
    if dt <= 0:
        raise ContractViolation("dt must be positive.")
    gamma = np.asarray(gamma, dtype=float)
    if not coeffs.action_space.contains(gamma)[0]:
        raise ContractViolation(f"Action {gamma.tolist()} lies outside Γ.")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    out = _advance(coeffs, t, x, np.atleast_1d(m), gamma[None, :], dt, xi if _has_noise(coeffs) else None)[0]
    if not np.all(np.isfinite(out)):
        raise NumericalError("Euler step produced non-finite state", t=t, x=x[0].tolist(), dt=dt)
    return out


def first_exit_index(domain, states) -> int | None:
    """Smallest j with states[j] ∉ O, or None (inf ∅ = ∞)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if states.shape[0] == 0:
        raise ContractViolation("states must be nonempty.")
    outside = np.flatnonzero(~domain.contains(states))
    return int(outside[0]) if outside.size else None


# ---------------------------------------------------------------------
# Batched simulation kernel
# ---------------------------------------------------------------------

def _bridge_survival(coeffs: CoefficientSet, X, Xn, dt: float) -> np.ndarray:
    """Probability that the Brownian bridge between two interior nodes stays in the box."""
    lower, upper = coeffs.domain.bounding_box
    diffusion = np.diag(coeffs.sigma @ coeffs.sigma.T)
    keep = np.ones(X.shape[0])
    for k in range(coeffs.dim_d):
        if diffusion[k] == 0.0:
            continue
        scale = 2.0 / (diffusion[k] * dt)
        up = np.exp(-scale * np.clip(upper[k] - X[:, k], 0, None) * np.clip(upper[k] - Xn[:, k], 0, None))
        down = np.exp(-scale * np.clip(X[:, k] - lower[k], 0, None) * np.clip(Xn[:, k] - lower[k], 0, None))
        keep *= (1.0 - up) * (1.0 - down)
    return keep


@dataclass
class _BatchState:
    X: np.ndarray
    absorption: np.ndarray
    running_cost: np.ndarray
    terminal_cost: np.ndarray
    states: list | None = None
    controls: list | None = None


def _run_batch(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    feedback,
    means: np.ndarray,
    X0: np.ndarray,
    normals: np.ndarray | None,
    uniforms: np.ndarray | None = None,
    record: bool = False,
    observer=None,
) -> _BatchState:
    """
    March a batch of particles.

    ``means`` is either a frozen (n_steps + 1, d0) array or a callable
    ``means(j, X, alive)`` returning the mean at index j from the current
    states (the N-player coupling). ``feedback`` is called with the alive
    rows; when it sets ``indexed = True`` it also receives their indices.
    ``observer(j, X, alive)`` is called at every grid index before stepping.
    """
    X0 = np.atleast_2d(np.asarray(X0, dtype=float))
    if not np.all(coeffs.domain.contains(X0)):
        raise ContractViolation("Initial states must lie in O.")
    n = X0.shape[0]
    dt = grid.dt
    times = grid.times
    rest = coeffs.action_space.rest_action()
    state = _BatchState(
        X=X0.copy(),
        absorption=np.full(n, NOT_ABSORBED, dtype=int),
        running_cost=np.zeros(n),
        terminal_cost=np.zeros(n),
        states=[X0.copy()] if record else None,
        controls=[] if record else None,
    )
    alive = np.ones(n, dtype=bool)
    coupled = callable(means)
    indexed = getattr(feedback, "indexed", False)
    for j in range(grid.n_steps):
        t = times[j]
        m = means(j, state.X, alive) if coupled else means[j]
        if observer is not None:
            observer(j, state.X, alive)
        G = np.broadcast_to(rest, state.X.shape).copy()
        if alive.any():
            idx = np.flatnonzero(alive)
            if indexed:
                G[alive] = feedback(t, state.X[alive], X0[alive], idx)
            else:
                G[alive] = feedback(t, state.X[alive], X0[alive])
            Xa = state.X[alive]
            state.running_cost[alive] += coeffs.running_cost_f(t, Xa, m, G[alive]) * dt
            XI = normals[j][alive] if normals is not None else None
            Xn = _advance(coeffs, t, Xa, m, G[alive], dt, XI)
            if not np.all(np.isfinite(Xn)):
                raise NumericalError("Euler step produced non-finite state", step=j, t=float(t))
            exited = ~coeffs.domain.contains(Xn)
            if uniforms is not None:
                crossed = uniforms[j][alive] > _bridge_survival(coeffs, Xa, Xn, dt)
                exited |= crossed
            state.X[idx] = Xn
            newly = idx[exited]
            if newly.size:
                state.absorption[newly] = j + 1
                state.terminal_cost[newly] = coeffs.terminal_cost_F(times[j + 1], state.X[newly])
                alive[newly] = False
        if record:
            state.states.append(state.X.copy())
            state.controls.append(G)
    if coupled:
        means(grid.n_steps, state.X, alive)
    if observer is not None:
        observer(grid.n_steps, state.X, alive)
    if alive.any():
        state.terminal_cost[alive] = coeffs.terminal_cost_F(times[-1], state.X[alive])
    return state


def _check_bridge(coeffs: CoefficientSet):
    if not coeffs.domain.is_box:
        raise ContractViolation("Bridge correction is only available for box domains.")
    a = coeffs.sigma @ coeffs.sigma.T
    if np.any(a - np.diag(np.diag(a)) != 0.0):
        raise ContractViolation("Bridge correction needs a diagonal diffusion matrix.")


def simulate_path(coeffs: CoefficientSet, grid: TimeGrid, feedback, mflow, noise, x0, bridge: bool = False) -> PathRecord:
    """
    One player against a frozen flow of measures.

    Control at step j is feedback(t_j, states[j]); after absorption the path
    is frozen at the first outside node and the recorded control is the
    projection of 0 onto Γ.
    """
    x0 = np.asarray(x0, dtype=float).reshape(1, -1)
    if not coeffs.domain.contains(x0)[0]:
        raise ContractViolation(f"x0={x0[0].tolist()} is not in O.")
    normals = None
    if _has_noise(coeffs):
        normals = noise.normals(grid.n_steps, coeffs.dim_d)[:, None, :]
    uniforms = None
    if bridge:
        _check_bridge(coeffs)
        uniforms = noise.uniforms(grid.n_steps)[:, None]
    state = _run_batch(coeffs, grid, feedback, np.asarray(mflow.means), x0, normals, uniforms, record=True)
    states = np.stack(state.states)[:, 0, :]
    k = int(state.absorption[0])
    return PathRecord(
        states=states,
        absorption_index=None if k == NOT_ABSORBED else k,
        exit_state=states[k].copy() if k != NOT_ABSORBED else states[-1].copy(),
        controls_applied=np.stack(state.controls)[:, 0, :],
    )


# ---------------------------------------------------------------------
# Populations against a frozen flow
# ---------------------------------------------------------------------

@dataclass
class PopulationStats:
    """Survival, conditional w-means and costs of a (weighted) particle population."""

    grid: TimeGrid
    exact: bool
    weights: np.ndarray = field(repr=False)
    alive_weight: np.ndarray = field(repr=False)
    alive_count: np.ndarray = field(repr=False)
    w_sum: np.ndarray = field(repr=False)
    w_sq_sum: np.ndarray = field(repr=False)
    costs: np.ndarray = field(repr=False)
    absorption: np.ndarray = field(repr=False)

    @property
    def survival(self) -> np.ndarray:
        return self.alive_weight / self.weights.sum()

    @property
    def extinct_from(self) -> int | None:
        dead = np.flatnonzero(self.alive_count == 0)
        return int(dead[0]) if dead.size else None

    def conditional_means(self) -> np.ndarray:
        """Rows after extinction are NaN."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.w_sum / self.alive_weight[:, None]

    def mean_standard_errors(self) -> np.ndarray:
        if self.exact:
            return np.zeros_like(self.w_sum)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = self.w_sum / self.alive_weight[:, None]
            var = np.clip(self.w_sq_sum / self.alive_weight[:, None] - mean**2, 0.0, None)
            return np.sqrt(var / self.alive_count[:, None])

    @property
    def mean_cost(self) -> float:
        return float(np.dot(self.weights, self.costs) / self.weights.sum())

    @property
    def cost_standard_error(self) -> float:
        if self.exact or self.costs.size < 2:
            return 0.0
        return float(np.std(self.costs, ddof=1) / math.sqrt(self.costs.size))


def simulate_population(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    feedback,
    mflow,
    x0s,
    weights=None,
    seed: int = 0,
    replication: int = 0,
    chunk: int | None = None,
    bridge: bool = False,
) -> PopulationStats:
    """
    Push a population through frozen (feedback, flow), chunk by chunk.

    Particle p draws its noise from stream (seed, replication, p), so the
    result does not depend on the chunk size. With ``weights`` given and σ = 0
    the population is an exact finite-support law and standard errors are 0.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    n = x0s.shape[0]
    exact = weights is not None and not _has_noise(coeffs)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    chunk = int(chunk or solver_setting("MC_CHUNK"))
    if bridge:
        _check_bridge(coeffs)
    means = np.asarray(mflow.means)
    n_times = grid.n_steps + 1
    d0 = coeffs.dim_d0
    alive_weight = np.zeros(n_times)
    alive_count = np.zeros(n_times, dtype=int)
    w_sum = np.zeros((n_times, d0))
    w_sq_sum = np.zeros((n_times, d0))
    costs = np.empty(n)
    absorption = np.empty(n, dtype=int)

    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        block_weights = weights[start:stop]

        def observe(j, X, alive, block_weights=block_weights):
            if not alive.any():
                return
            wx = coeffs.integrand_w(X[alive])
            bw = block_weights[alive]
            alive_weight[j] += bw.sum()
            alive_count[j] += int(alive.sum())
            w_sum[j] += bw @ wx
            w_sq_sum[j] += bw @ (wx * wx)

        normals = None
        if _has_noise(coeffs):
            normals = noise_block(seed, replication, range(start, stop), grid.n_steps, coeffs.dim_d)
        uniforms = bridge_block(seed, replication, range(start, stop), grid.n_steps) if bridge else None
        state = _run_batch(coeffs, grid, feedback, means, x0s[start:stop], normals, uniforms, observer=observe)
        costs[start:stop] = state.running_cost + state.terminal_cost
        absorption[start:stop] = state.absorption

    stats = PopulationStats(
        grid=grid,
        exact=exact,
        weights=weights,
        alive_weight=alive_weight,
        alive_count=alive_count,
        w_sum=w_sum,
        w_sq_sum=w_sq_sum,
        costs=costs,
        absorption=absorption,
    )
    logger.debug(
        "population simulated particles=%d survival_T=%.6f exact=%s", n, stats.survival[-1], exact
    )
    return stats
