"""
Mean field game with absorption as a fixed point on flows of conditional laws.

One application of the best-response map Ψ: solve the control problem against
a frozen flow, push ν through the optimally controlled dynamics, condition on
survival. The fixed point is searched by damped Picard iteration on the
conditional-mean flow (the coefficients see the flow only through it).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .conf import solver_setting
from .exceptions import ContractViolation, ExtinctionError, SolverConfigurationError
from .feedback import MarkovFeedback
from .flows import MeasureFlow
from .hjb_kfp import SpaceGrid, ValueField, initial_density, renormalize, solve_hjb, solve_kfp
from .model import CoefficientSet, InitialLaw
from .sde import PopulationStats, TimeGrid, _has_noise, simulate_population
from .streams import initial_states

logger = logging.getLogger(__name__)

MODES = ("auto", "pde", "monte_carlo", "exact")

__all__ = [
    "MeasureFlow",
    "FixedPointReport",
    "SolverOptions",
    "MeanFieldSolution",
    "best_response_flow",
    "solve_fixed_point",
    "solve_mfg",
    "damped_picard",
    "mckean_vlasov_check",
    "expected_cost",
    "value_at_initial_law",
    "total_variation",
]


@dataclass
class FixedPointReport:
    iterations: int
    residuals: list
    final_residual: float
    converged: bool
    damping: float
    tol: float
    mode: str = ""

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "residuals": [float(r) for r in self.residuals],
            "final_residual": float(self.final_residual),
            "converged": self.converged,
            "damping": self.damping,
            "tol": self.tol,
            "mode": self.mode,
        }


@dataclass(frozen=True)
class SolverOptions:
    """
    How Ψ is evaluated.

    ``mode``: ``pde`` pushes ν forward with the Kolmogorov solver (d ≤ 2);
    ``monte_carlo`` simulates ``n_particles`` independent particles;
    ``exact`` propagates the atoms of ν with their weights (σ = 0 only);
    ``auto`` picks pde when the grid solver applies, else exact, else Monte Carlo.

    ``feedback`` replaces the HJB best response by a fixed feedback; it is
    required for d ≥ 3, where no grid solver exists.
    """

    mode: str = "auto"
    space_nodes: object = 101
    n_particles: int | None = None
    seed: int = 0
    feedback: MarkovFeedback | None = None
    mass_floor: float | None = None
    bridge: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise SolverConfigurationError(f"Unknown solver mode {self.mode!r}; choose one of {', '.join(MODES)}.")


@dataclass
class MeanFieldSolution:
    flow: MeasureFlow
    value_field: ValueField | None
    feedback: MarkovFeedback
    report: FixedPointReport
    options: SolverOptions = field(default_factory=SolverOptions)


# ---------------------------------------------------------------------
# One application of Ψ
# ---------------------------------------------------------------------

def _grid_solver_applies(coeffs: CoefficientSet) -> bool:
    a = coeffs.sigma @ coeffs.sigma.T
    return coeffs.dim_d <= 2 and not np.any(a - np.diag(np.diag(a)) != 0.0)


def resolve_mode(coeffs: CoefficientSet, options: SolverOptions) -> str:
    atoms = coeffs.initial_law.atoms() if coeffs.initial_law is not None else None
    exact_ok = atoms is not None and not _has_noise(coeffs)
    mode = options.mode
    if mode == "auto":
        if _grid_solver_applies(coeffs) and options.feedback is None:
            return "pde"
        return "exact" if exact_ok else "monte_carlo"
    if mode == "pde" and not _grid_solver_applies(coeffs):
        raise SolverConfigurationError("The pde mode needs d ≤ 2 and a diagonal diffusion matrix.")
    if mode == "pde" and options.feedback is not None:
        raise SolverConfigurationError("The pde mode computes its own feedback; drop the feedback override.")
    if mode == "exact" and not exact_ok:
        raise SolverConfigurationError("The exact mode needs σ = 0 and an initial law with finite support.")
    return mode


def _best_response(coeffs, grid, mflow, options) -> tuple[ValueField | None, MarkovFeedback]:
    if options.feedback is not None:
        return None, options.feedback
    if coeffs.dim_d > 2:
        raise SolverConfigurationError(f"No grid best response in d = {coeffs.dim_d}; pass an explicit feedback.")
    spacegrid = SpaceGrid.for_domain(coeffs.domain, options.space_nodes)
    value_field = solve_hjb(coeffs, grid, spacegrid, mflow)
    return value_field, value_field.feedback_function()


def population_flow(stats: PopulationStats, mass_floor: float | None = None) -> MeasureFlow:
    """Flow of conditional means from a simulated population; extinction aborts."""
    floor = float(solver_setting("MASS_FLOOR") if mass_floor is None else mass_floor)
    survival = stats.survival
    dead = np.flatnonzero((stats.alive_count == 0) | (survival <= floor))
    if dead.size:
        raise ExtinctionError(int(dead[0]), float(survival[dead[0]]))
    return MeasureFlow(grid=stats.grid, survival=survival, means=stats.conditional_means())


def _initial_population(coeffs: CoefficientSet, options: SolverOptions, mode: str):
    law = _require_law(coeffs)
    if mode == "exact":
        return law.atoms()
    n = int(options.n_particles or solver_setting("MC_PARTICLES"))
    return initial_states(law, coeffs.domain, options.seed, 0, range(n)), None


def _require_law(coeffs: CoefficientSet) -> InitialLaw:
    if coeffs.initial_law is None:
        raise ContractViolation("No initial law attached to the coefficient set.")
    return coeffs.initial_law


def _push_forward(coeffs, grid, mflow, value_field, feedback, options, mode) -> MeasureFlow:
    if mode == "pde":
        spacegrid = value_field.spacegrid
        m0 = initial_density(_require_law(coeffs), spacegrid)
        density = solve_kfp(coeffs, grid, spacegrid, value_field, m0)
        return renormalize(density, coeffs, options.mass_floor)
    x0s, weights = _initial_population(coeffs, options, mode)
    stats = simulate_population(
        coeffs, grid, feedback, mflow, x0s, weights=weights, seed=options.seed, bridge=options.bridge
    )
    return population_flow(stats, options.mass_floor)


def best_response_flow(
    coeffs: CoefficientSet, grid: TimeGrid, mflow: MeasureFlow, options: SolverOptions | None = None
) -> tuple[ValueField | None, MeasureFlow]:
    """
    Ψ(mflow): optimal feedback against ``mflow`` and the conditional flow it induces.

    The value field is None when the feedback comes from ``options.feedback``.
    """
    options = options or SolverOptions()
    mode = resolve_mode(coeffs, options)
    value_field, feedback = _best_response(coeffs, grid, mflow, options)
    return value_field, _push_forward(coeffs, grid, mflow, value_field, feedback, options, mode)


# ---------------------------------------------------------------------
# Fixed point
# ---------------------------------------------------------------------

def damped_picard(response, init_flow: MeasureFlow, damping: float, tol: float, max_iter: int):
    """
    means_{k+1} = (1 − λ)·means_k + λ·Ψ(means_k).

    ``response(flow)`` returns (aux, Ψ(flow)). The residual of iteration k is
    sup_j |means_{k+1}(t_j) − means_k(t_j)|; hitting ``max_iter`` yields a
    non-converged report.
    """
    if not 0.0 < damping <= 1.0:
        raise ContractViolation("damping must lie in (0, 1].")
    if tol <= 0.0:
        raise ContractViolation("tol must be positive.")
    flow = init_flow
    aux = None
    residuals = []
    for k in range(int(max_iter)):
        aux, image = response(flow)
        damped = flow.damped_towards(image, damping)
        residual = damped.sup_distance(flow)
        residuals.append(residual)
        flow = damped
        logger.info("picard iteration=%d residual=%.3e survival_T=%.6f", k + 1, residual, image.survival[-1])
        if residual <= tol:
            break
    final = residuals[-1] if residuals else float("inf")
    report = FixedPointReport(
        iterations=len(residuals),
        residuals=residuals,
        final_residual=final,
        converged=final <= tol,
        damping=damping,
        tol=tol,
    )
    if not report.converged:
        logger.warning("fixed point not converged iterations=%d residual=%.3e tol=%.1e", report.iterations, final, tol)
    return flow, aux, report


def default_init_flow(coeffs: CoefficientSet, grid: TimeGrid) -> MeasureFlow:
    """Flat flow at ∫w dν (w(0) when ν has no closed-form mean)."""
    law = coeffs.initial_law
    atoms = law.atoms() if law is not None else None
    if atoms is not None:
        points, weights = atoms
        mean = weights @ coeffs.integrand_w(points)
    elif law is not None and law.kind == "uniform_on_box":
        mid = (np.array(law.parameters["lower"], float) + np.array(law.parameters["upper"], float)) / 2.0
        mean = coeffs.integrand_w(mid[None, :])[0]
    else:
        mean = coeffs.w_at_origin()
    return MeasureFlow.constant(grid, mean)


def solve_fixed_point(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    init_flow: MeasureFlow | None = None,
    damping: float | None = None,
    tol: float | None = None,
    max_iter: int | None = None,
    options: SolverOptions | None = None,
) -> tuple[MeasureFlow, ValueField | None, FixedPointReport]:
    options = options or SolverOptions()
    damping = float(solver_setting("DAMPING") if damping is None else damping)
    tol = float(solver_setting("TOL") if tol is None else tol)
    max_iter = int(solver_setting("MAX_ITER") if max_iter is None else max_iter)
    mode = resolve_mode(coeffs, options)
    init_flow = init_flow or default_init_flow(coeffs, grid)
    if init_flow.grid != grid:
        raise ContractViolation("The initial flow lives on a different time grid.")

    if coeffs.is_decoupled:
        # Ψ ignores its argument: its image is the fixed point.
        value_field, flow = best_response_flow(coeffs, grid, init_flow, options)
        report = FixedPointReport(1, [0.0], 0.0, True, damping, tol, mode)
        logger.info("decoupled game solved in one evaluation mode=%s", mode)
        return flow, value_field, report

    flow, value_field, report = damped_picard(
        lambda current: best_response_flow(coeffs, grid, current, options), init_flow, damping, tol, max_iter
    )
    report.mode = mode
    return flow, value_field, report


def solve_mfg(coeffs: CoefficientSet, grid: TimeGrid, options: SolverOptions | None = None, **kwargs) -> MeanFieldSolution:
    options = options or SolverOptions()
    flow, value_field, report = solve_fixed_point(coeffs, grid, options=options, **kwargs)
    feedback = options.feedback if value_field is None else value_field.feedback_function()
    return MeanFieldSolution(flow=flow, value_field=value_field, feedback=feedback, report=report, options=options)


# ---------------------------------------------------------------------
# Consistency and costs
# ---------------------------------------------------------------------

def mckean_vlasov_check(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    feedback: MarkovFeedback,
    mflow: MeasureFlow,
    n_particles: int,
    seed: int,
    exact: bool = False,
) -> float:
    """
    sup_j |conditional w-mean of particles under (feedback, mflow) − mflow.means|.

    With ``exact`` the atoms of ν are propagated with their weights (σ = 0).
    Times after all particles are absorbed are left out and logged.
    """
    law = _require_law(coeffs)
    if exact:
        atoms = law.atoms()
        if atoms is None or _has_noise(coeffs):
            raise SolverConfigurationError("Exact propagation needs σ = 0 and a finite-support initial law.")
        x0s, weights = atoms
    else:
        if n_particles < 1000:
            raise ContractViolation("n_particles must be at least 1000.")
        x0s, weights = initial_states(law, coeffs.domain, seed, 0, range(n_particles)), None
    stats = simulate_population(coeffs, grid, feedback, mflow, x0s, weights=weights, seed=seed)
    alive = stats.alive_count > 0
    if not alive.all():
        logger.warning(
            "all particles absorbed from index %d; distance reported on the surviving prefix", stats.extinct_from
        )
    gap = np.abs(stats.conditional_means()[alive] - np.asarray(mflow.means)[alive])
    return float(gap.max()) if gap.size else 0.0


def expected_cost(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    feedback: MarkovFeedback,
    mflow: MeasureFlow,
    options: SolverOptions | None = None,
) -> tuple[float, float]:
    """J(ν, u; 𝔭) for a feedback against a frozen flow: (estimate, standard error)."""
    options = options or SolverOptions()
    atoms = _require_law(coeffs).atoms()
    if atoms is not None and not _has_noise(coeffs):
        x0s, weights = atoms
    else:
        x0s, weights = _initial_population(coeffs, options, "monte_carlo")
    stats = simulate_population(coeffs, grid, feedback, mflow, x0s, weights=weights, seed=options.seed)
    return stats.mean_cost, stats.cost_standard_error


def value_at_initial_law(value_field: ValueField, law: InitialLaw) -> float:
    """∫ V(0, x) ν(dx) on the space grid."""
    atoms = law.atoms()
    if atoms is not None:
        points, weights = atoms
        return float(sum(w * value_field.value_at(p) for p, w in zip(points, weights)))
    density = initial_density(law, value_field.spacegrid)
    return float(np.sum(value_field.values[0] * density) * value_field.spacegrid.cell_volume)


def total_variation(mflow: MeasureFlow) -> float:
    return mflow.total_variation()
