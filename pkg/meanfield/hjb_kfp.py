"""
Finite-difference solvers for the backward HJB equation and the forward
(Kolmogorov) equation with Dirichlet boundary on a rectangular grid, d ∈ {1, 2}.

Both equations share one implicit diffusion matrix (Dirichlet rows are the
identity), factorized once per solve. The Hamiltonian part of the HJB and the
transport part of the forward equation are explicit and upwinded, so both
steps are monotone under

    dt · Σ_k (max|γ_k| + K) / dx_k ≤ 1.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sparse
from scipy.integrate import trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import splu

from .conf import solver_setting
from .exceptions import (
    ContractViolation,
    ExtinctionError,
    NumericalError,
    SchemeError,
    SolverConfigurationError,
)
from .feedback import GridFeedback
from .flows import MeasureFlow
from .model import ActionBox, AbsorbingDomain, CoefficientSet, InitialLaw
from .sde import TimeGrid

logger = logging.getLogger(__name__)

NEGATIVE_DENSITY_TOL = 1e-12
TIE_TOL = 1e-12
INVPHI = (5**0.5 - 1.0) / 2.0
MAX_GOLDEN_STEPS = 200


# ---------------------------------------------------------------------
# Space grid
# ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpaceGrid:
    """
    Tensor grid over the bounding box of O.

    Nodes outside O (or within the boundary tolerance of ∂O) are boundary
    nodes; the outer layer of the grid is always boundary.
    """

    axes: tuple
    interior: np.ndarray = field(repr=False)

    @classmethod
    def for_domain(cls, domain: AbsorbingDomain, nodes) -> "SpaceGrid":
        dim = domain.dim
        if dim not in (1, 2):
            raise SolverConfigurationError(
                f"The grid solver handles d = 1 or 2 only (got d = {dim}); use Monte Carlo."
            )
        counts = (int(nodes),) * dim if np.isscalar(nodes) else tuple(int(n) for n in nodes)
        if len(counts) != dim or min(counts) < 3:
            raise SolverConfigurationError("Need at least 3 nodes per axis.")
        lower, upper = domain.bounding_box
        axes = tuple(np.linspace(lower[k], upper[k], counts[k]) for k in range(dim))
        points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        return cls(axes=axes, interior=domain.contains(points))

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(len(axis) for axis in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([axis[1] - axis[0] for axis in self.axes])

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """
        Trapezoid rule over the grid for the trailing node axis of ``values``.

        Densities vanish on the outer layer, so this equals the nodal sum times
        the cell volume.
        """
        values = np.asarray(values, dtype=float)
        values = values.reshape(values.shape[:-1] + self.shape)
        for nodes in reversed(self.axes):
            values = trapezoid(values, nodes, axis=-1)
        return values

    @property
    def strides(self) -> tuple:
        return (self.shape[1], 1) if self.dim == 2 else (1,)

    @cached_property
    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def _along(self, axis: int, part: slice) -> tuple:
        index = [slice(None)] * self.dim
        index[axis] = part
        return tuple(index)

    def one_sided_differences(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Forward and backward differences per axis; grid edges reuse the available side."""
        grid_values = V.reshape(self.shape)
        fwd = np.empty((self.size, self.dim))
        bwd = np.empty((self.size, self.dim))
        for a, dx in enumerate(self.spacing):
            diff = np.diff(grid_values, axis=a) / dx
            f = np.empty(self.shape)
            b = np.empty(self.shape)
            f[self._along(a, slice(None, -1))] = diff
            f[self._along(a, slice(-1, None))] = diff[self._along(a, slice(-1, None))]
            b[self._along(a, slice(1, None))] = diff
            b[self._along(a, slice(0, 1))] = diff[self._along(a, slice(0, 1))]
            fwd[:, a] = f.ravel()
            bwd[:, a] = b.ravel()
        return fwd, bwd

    def flux_divergence(self, m: np.ndarray, B: np.ndarray) -> np.ndarray:
        """div(B m) with the conservative upwind face flux max(B_i, 0) m_i + min(B_{i+1}, 0) m_{i+1}."""
        density = m.reshape(self.shape)
        div = np.zeros(self.shape)
        for a, dx in enumerate(self.spacing):
            speed = B[:, a].reshape(self.shape)
            lo = self._along(a, slice(None, -1))
            hi = self._along(a, slice(1, None))
            flux = np.maximum(speed[lo], 0.0) * density[lo] + np.minimum(speed[hi], 0.0) * density[hi]
            div[lo] += flux / dx
            div[hi] -= flux / dx
        return div.ravel()

    def diffusion_system(self, half_diffusion: np.ndarray, dt: float) -> sparse.csc_matrix:
        """I − dt·Σ_k (a_kk / 2)·∂²_k on interior rows, identity on boundary rows."""
        size = self.size
        inner = np.flatnonzero(self.interior)
        diagonal = np.ones(size)
        rows, cols, vals = [], [], []
        for a, (dx, stride) in enumerate(zip(self.spacing, self.strides)):
            c = dt * half_diffusion[a] / dx**2
            if c == 0.0:
                continue
            diagonal[inner] += 2.0 * c
            for shift in (stride, -stride):
                rows.append(inner)
                cols.append(inner + shift)
                vals.append(np.full(inner.size, -c))
        rows.append(np.arange(size))
        cols.append(np.arange(size))
        vals.append(diagonal)
        matrix = sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
        )
        return matrix.tocsc()

    def interpolation_weights(self, point) -> list[tuple[int, float]]:
        """Multilinear split of a point mass over the surrounding nodes."""
        per_axis = []
        for a, axis in enumerate(self.axes):
            pos = (float(point[a]) - axis[0]) / (axis[1] - axis[0])
            i = int(np.clip(np.floor(pos), 0, len(axis) - 2))
            frac = float(np.clip(pos - i, 0.0, 1.0))
            per_axis.append(((i, 1.0 - frac), (i + 1, frac)))
        out = []
        for combo in itertools.product(*per_axis):
            index = sum(i * s for (i, _), s in zip(combo, self.strides))
            share = float(np.prod([w for _, w in combo]))
            if share > 0.0:
                out.append((index, share))
        return out

    def on_grid(self, values: np.ndarray, X) -> np.ndarray:
        """Linear interpolation of a nodal field at arbitrary points."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.dim == 1:
            return np.interp(X[:, 0], self.axes[0], values)
        interp = RegularGridInterpolator(self.axes, values.reshape(self.shape), bounds_error=False, fill_value=None)
        return interp(X)


# ---------------------------------------------------------------------
# Hamiltonian
# ---------------------------------------------------------------------

def _golden_section(f, P, lower, upper, active) -> np.ndarray:
    """Coordinate-wise minimisation of c_k(g) + p_k g over [l_k, u_k], vectorised over rows."""
    tol = float(solver_setting("GOLDEN_TOL"))
    n = P.shape[0]
    rest = np.clip(0.0, lower, upper)
    G = np.broadcast_to(rest, P.shape).copy()
    for k in np.flatnonzero(active):
        p = P[:, k]

        def phi(g, k=k, p=p):
            return f.coordinate_cost(k, g) + p * g

        a = np.full(n, lower[k])
        b = np.full(n, upper[k])
        c = b - INVPHI * (b - a)
        e = a + INVPHI * (b - a)
        fc, fe = phi(c), phi(e)
        for _ in range(MAX_GOLDEN_STEPS):
            if np.max(b - a) <= tol:
                break
            left = fc <= fe
            b = np.where(left, e, b)
            a = np.where(left, a, c)
            new_c = np.where(left, b - INVPHI * (b - a), e)
            new_e = np.where(left, c, a + INVPHI * (b - a))
            fc, fe = np.where(left, phi(new_c), fe), np.where(left, fc, phi(new_e))
            c, e = new_c, new_e
        candidates = np.stack([(a + b) / 2.0, np.full(n, lower[k]), np.full(n, upper[k]), np.full(n, rest[k])], axis=1)
        values = np.stack([phi(candidates[:, i]) for i in range(candidates.shape[1])], axis=1)
        best = values.min(axis=1, keepdims=True)
        tied = values <= best + TIE_TOL * (1.0 + np.abs(best))
        G[:, k] = candidates[np.arange(n), np.argmin(np.where(tied, np.abs(candidates), np.inf), axis=1)]
    return G


def _candidate_actions(box: ActionBox) -> np.ndarray:
    """Dense grid over the active coordinates, sorted by norm then lexicographically."""
    points = int(solver_setting("HAMILTONIAN_GRID_POINTS"))
    active = box.active_mask
    axes = [
        np.linspace(box.lower[k], box.upper[k], points) if active[k] else np.array([box.lower[k]])
        for k in range(box.dim)
    ]
    cand = np.array(list(itertools.product(*axes)))
    keys = tuple(cand[:, k] for k in reversed(range(box.dim))) + (np.round(np.linalg.norm(cand, axis=1), 12),)
    return cand[np.lexsort(keys)]


def _grid_search(coeffs: CoefficientSet, t, X, m, P) -> np.ndarray:
    cand = _candidate_actions(coeffs.action_space)
    f = coeffs.running_cost_f
    G = np.empty_like(P)
    for i in range(X.shape[0]):
        rows = np.broadcast_to(X[i], (cand.shape[0], X.shape[1]))
        values = f(t, rows, m, cand) + cand @ P[i]
        best = values.min()
        G[i] = cand[np.flatnonzero(values <= best + TIE_TOL * (1.0 + abs(best)))[0]]
    return G


def minimize_hamiltonian(coeffs: CoefficientSet, t: float, X, m, P, rule: str | None = None):
    """
    Batched γ*(x, p) and H(x, p) = min_γ f + p·(γ + b̄) over Γ.

    The rule comes from the running-cost family unless forced. Ties go to the
    minimum-norm minimiser (the projection of 0 onto Γ when f ignores γ).
    """
    f = coeffs.running_cost_f
    box = coeffs.action_space
    rule = rule or f.control_rule
    lower, upper = np.array(box.lower), np.array(box.upper)
    active = box.active_mask
    X = np.atleast_2d(X)
    P = np.atleast_2d(P)
    if rule == "independent":
        rest = box.rest_action()
        G = np.where(P > 0, lower, np.where(P < 0, upper, rest))
        G[:, ~active] = lower[~active]
    elif rule == "quadratic":
        G = box.project(-P / (2.0 * f.control_weight))
    elif rule == "separable":
        G = _golden_section(f, P, lower, upper, active)
    elif rule == "grid":
        if not solver_setting("HAMILTONIAN_GRID_FALLBACK"):
            raise SolverConfigurationError(
                f"Running cost {type(f).__name__} is not convex in the control and the grid fallback is disabled."
            )
        G = _grid_search(coeffs, t, X, m, P)
    else:
        raise SolverConfigurationError(f"Unknown Hamiltonian minimisation rule {rule!r}.")
    H = f(t, X, m, G) + np.sum(P * (G + coeffs.drift_bbar(t, X, m)), axis=1)
    return G, H


def hamiltonian_min(coeffs: CoefficientSet, t: float, x, m, z, rule: str | None = None) -> tuple[np.ndarray, float]:
    """γ*(t, x, m, z) ∈ argmin_γ f(t, x, m, γ) + z·(γ + b̄(t, x, m)) and the minimum value."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    z = np.asarray(z, dtype=float).reshape(1, -1)
    m = np.atleast_1d(np.asarray(m, dtype=float))
    for name, value in (("x", x), ("m", m), ("z", z)):
        if not np.all(np.isfinite(value)):
            raise NumericalError("Non-finite input to hamiltonian_min", argument=name)
    G, H = minimize_hamiltonian(coeffs, t, x, m, z, rule)
    return G[0], float(H[0])


# ---------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------

@dataclass(eq=False)
class ValueField:
    grid: TimeGrid
    spacegrid: SpaceGrid
    values: np.ndarray = field(repr=False)  # (n_steps + 1, n_nodes)
    gradients: np.ndarray = field(repr=False)  # (n_steps + 1, n_nodes, d), upwind
    feedback: np.ndarray = field(repr=False)  # (n_steps + 1, n_nodes, d)
    means: np.ndarray = field(repr=False)  # flow the field was solved against
    action_space: ActionBox

    def feedback_function(self) -> GridFeedback:
        n_times = self.grid.n_steps + 1
        actions = self.feedback.reshape((n_times,) + self.spacegrid.shape + (self.spacegrid.dim,))
        return GridFeedback(
            times=self.grid.times, axes=self.spacegrid.axes, actions=actions, action_space=self.action_space
        )

    def value_at(self, x, j: int = 0) -> float:
        return float(self.spacegrid.on_grid(self.values[j], x)[0])


@dataclass(eq=False)
class DensityField:
    grid: TimeGrid
    spacegrid: SpaceGrid
    densities: np.ndarray = field(repr=False)  # (n_steps + 1, n_nodes)
    masses: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------
# Scheme checks
# ---------------------------------------------------------------------

def _half_diffusion(coeffs: CoefficientSet, spacegrid: SpaceGrid) -> np.ndarray:
    if spacegrid.dim != coeffs.dim_d:
        raise SolverConfigurationError(f"Space grid has d = {spacegrid.dim}, model has d = {coeffs.dim_d}.")
    a = coeffs.sigma @ coeffs.sigma.T
    if np.any(a - np.diag(np.diag(a)) != 0.0):
        raise SolverConfigurationError("The grid solver needs a diagonal diffusion matrix σσᵀ.")
    return 0.5 * np.diag(a)


def stability_ratio(coeffs: CoefficientSet, grid: TimeGrid, spacegrid: SpaceGrid) -> float:
    """dt·Σ_k (max|γ_k| + K)/dx_k; the explicit parts are monotone when this is at most 1."""
    box = coeffs.action_space
    speed = np.maximum(np.abs(box.lower), np.abs(box.upper)) + coeffs.bound_K
    return float(grid.dt * np.sum(speed / spacegrid.spacing))


def _check_stability(coeffs, grid, spacegrid):
    ratio = stability_ratio(coeffs, grid, spacegrid)
    if ratio > 1.0 + 1e-12:
        raise SolverConfigurationError(
            f"Time step too large for the explicit upwind part: dt·Σ(max|γ|+K)/dx = {ratio:.4g} > 1."
        )


# ---------------------------------------------------------------------
# Backward HJB
# ---------------------------------------------------------------------

def _hamiltonian_step(coeffs, t, X, m, V, spacegrid, guess):
    """Upwind gradient and minimiser, with one policy-iteration pass to settle the upwind side."""
    fwd, bwd = spacegrid.one_sided_differences(V)
    central = 0.5 * (fwd + bwd)
    bbar = coeffs.drift_bbar(t, X, m)

    def upwind(drift):
        return np.where(drift > 0, fwd, np.where(drift < 0, bwd, central))

    P = upwind(guess + bbar)
    G, _ = minimize_hamiltonian(coeffs, t, X, m, P)
    G, _ = minimize_hamiltonian(coeffs, t, X, m, upwind(G + bbar))
    P = upwind(G + bbar)
    H = coeffs.running_cost_f(t, X, m, G) + np.sum(P * (G + bbar), axis=1)
    return P, G, H


def solve_hjb(coeffs: CoefficientSet, grid: TimeGrid, spacegrid: SpaceGrid, mflow: MeasureFlow) -> ValueField:
    """
    March the HJB backward from V(T) = F(T, ·) with V = F(t, ·) off O.

    Each step: (I − dt·½a·Δ) V^j = V^{j+1} + dt·H(∇V^{j+1}) on interior nodes.
    """
    half_a = _half_diffusion(coeffs, spacegrid)
    _check_stability(coeffs, grid, spacegrid)
    n = grid.n_steps
    dt = grid.dt
    times = grid.times
    X = spacegrid.points
    inside = spacegrid.interior
    means = np.asarray(mflow.means)
    F = coeffs.terminal_cost_F
    system = splu(spacegrid.diffusion_system(half_a, dt))

    values = np.empty((n + 1, spacegrid.size))
    gradients = np.empty((n + 1, spacegrid.size, spacegrid.dim))
    feedback = np.empty_like(gradients)
    values[n] = F(times[n], X)
    rest = np.broadcast_to(coeffs.action_space.rest_action(), X.shape)
    gradients[n], feedback[n], _ = _hamiltonian_step(coeffs, times[n], X, means[n], values[n], spacegrid, rest)
    for j in range(n - 1, -1, -1):
        P, G, H = _hamiltonian_step(coeffs, times[j], X, means[j], values[j + 1], spacegrid, feedback[j + 1])
        rhs = np.where(inside, values[j + 1] + dt * H, F(times[j], X))
        V = system.solve(rhs)
        if not np.all(np.isfinite(V)):
            raise NumericalError("HJB step produced non-finite values", step=j, t=float(times[j]))
        values[j] = V
        gradients[j] = P
        feedback[j] = G
    logger.debug(
        "hjb solved nodes=%d steps=%d value_range=(%.6g, %.6g)", spacegrid.size, n, values[0].min(), values[0].max()
    )
    return ValueField(
        grid=grid,
        spacegrid=spacegrid,
        values=values,
        gradients=gradients,
        feedback=feedback,
        means=means,
        action_space=coeffs.action_space,
    )


# ---------------------------------------------------------------------
# Forward equation
# ---------------------------------------------------------------------

def initial_density(law: InitialLaw, spacegrid: SpaceGrid) -> np.ndarray:
    """Nodal density of ν (zero on boundary nodes) with Σ m·dV = 1."""
    density = np.zeros(spacegrid.size)
    atoms = law.atoms()
    points = spacegrid.points
    if atoms is not None:
        for point, weight in zip(*atoms):
            for node, share in spacegrid.interpolation_weights(point):
                density[node] += weight * share
    elif law.kind == "uniform_on_box":
        lower = np.array(law.parameters["lower"], float)
        upper = np.array(law.parameters["upper"], float)
        density[np.all((points >= lower) & (points <= upper), axis=1)] = 1.0
    else:
        mean = np.array(law.parameters["mean"], float)
        std = np.array(law.parameters["std"], float)
        density = np.exp(-0.5 * np.sum(((points - mean) / std) ** 2, axis=1))
    density[~spacegrid.interior] = 0.0
    total = density.sum() * spacegrid.cell_volume
    if total <= 0.0:
        raise ContractViolation("The initial law puts no mass on interior grid nodes; refine the grid.")
    return density / total


def solve_kfp(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    spacegrid: SpaceGrid,
    value_field: ValueField,
    initial_density,
) -> DensityField:
    """
    Forward equation for the unnormalized sub-probability density, driven by
    the feedback of ``value_field`` and the flow it was solved against.
    """
    half_a = _half_diffusion(coeffs, spacegrid)
    _check_stability(coeffs, grid, spacegrid)
    m0 = np.asarray(initial_density, dtype=float).reshape(spacegrid.size)
    if np.any(m0 < -NEGATIVE_DENSITY_TOL):
        raise ContractViolation("Initial density must be nonnegative.")
    inside = spacegrid.interior
    n = grid.n_steps
    dt = grid.dt
    times = grid.times
    X = spacegrid.points
    system = splu(spacegrid.diffusion_system(half_a, dt))

    densities = np.empty((n + 1, spacegrid.size))
    densities[0] = np.where(inside, np.clip(m0, 0.0, None), 0.0)
    for j in range(n):
        B = value_field.feedback[j] + coeffs.drift_bbar(times[j], X, value_field.means[j])
        transported = np.where(inside, densities[j] - dt * spacegrid.flux_divergence(densities[j], B), 0.0)
        nxt = system.solve(transported)
        nxt[~inside] = 0.0
        lowest = float(nxt.min())
        if lowest < -NEGATIVE_DENSITY_TOL:
            raise SchemeError(f"Forward scheme produced density {lowest:.3e} at step {j + 1}; refine dt or dx.")
        if not np.all(np.isfinite(nxt)):
            raise NumericalError("Forward step produced non-finite density", step=j)
        densities[j + 1] = np.clip(nxt, 0.0, None)
    masses = spacegrid.integrate(densities)
    logger.debug("kfp solved steps=%d mass_T=%.6g", n, masses[-1])
    return DensityField(grid=grid, spacegrid=spacegrid, densities=densities, masses=masses)


def renormalize(density: DensityField, coeffs: CoefficientSet, mass_floor: float | None = None) -> MeasureFlow:
    """Conditional laws p(t) = m(t)/mass(t), summarised by survival, w-means and nodal histograms."""
    floor = float(solver_setting("MASS_FLOOR") if mass_floor is None else mass_floor)
    masses = density.masses
    low = np.flatnonzero(masses <= floor)
    if low.size:
        raise ExtinctionError(int(low[0]), float(masses[low[0]]))
    weights = density.densities * density.spacegrid.cell_volume
    histograms = weights / weights.sum(axis=1, keepdims=True)
    means = histograms @ coeffs.integrand_w(density.spacegrid.points)
    return MeasureFlow(
        grid=density.grid,
        survival=masses / masses[0],
        means=means,
        histograms=histograms,
        nodes=density.spacegrid.points,
    )
