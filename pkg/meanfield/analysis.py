"""
Finite-N diagnostics of a mean field solution: the ε-Nash gap of the induced
profile and the distance of the renormalized empirical measure to the
conditional flow.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .catalog import ConstantDrift
from .counterexample import exact_costs
from .exceptions import ContractViolation
from .feedback import ConstantFeedback, MarkovFeedback
from .flows import MeasureFlow
from .mfg import MeanFieldSolution, SolverOptions, _best_response
from .model import ActionBox, CoefficientSet
from .nplayer import Ensemble, StrategyProfile, cost_J, simulate_nplayer
from .parallel import ordered_map
from .sde import TimeGrid, simulate_population
from .streams import AUXILIARY, generator, initial_states

logger = logging.getLogger(__name__)

REFERENCES = ("limit", "empirical")
MIN_REPLICATIONS = 30
SUBSTITUTION_NOTE = (
    "The deviation is a best response against a reference flow, not the exact "
    "N-player best response; the gap estimates ε only up to this substitution."
)


def _mean_and_error(values) -> tuple[float, float]:
    values = np.asarray(values, dtype=float)
    mean = math.fsum(values) / values.size
    if values.size < 2:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1) / math.sqrt(values.size))


def _check_ladder(ladder) -> list[int]:
    ladder = [int(n) for n in ladder]
    if not ladder or any(n < 1 for n in ladder) or any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ContractViolation("The N ladder must be a strictly increasing list of positive integers.")
    return ladder


# ---------------------------------------------------------------------
# Nash gap
# ---------------------------------------------------------------------

@dataclass
class NashGapRow:
    N: int
    replications: int
    cost_equilibrium: float
    se_equilibrium: float
    cost_deviation: float
    se_deviation: float
    gap: float
    se_gap: float
    equilibrium_costs: np.ndarray = field(default=None, repr=False)
    deviation_costs: np.ndarray = field(default=None, repr=False)
    exact: bool = False


@dataclass
class NashGapReport:
    N_ladder: list
    rows: list
    replications: int
    reference: str
    note: str = SUBSTITUTION_NOTE

    @property
    def cost_equilibrium(self) -> list:
        return [(r.cost_equilibrium, r.se_equilibrium) for r in self.rows]

    @property
    def cost_deviation(self) -> list:
        return [(r.cost_deviation, r.se_deviation) for r in self.rows]

    @property
    def gap(self) -> list:
        return [r.gap for r in self.rows]

    def as_dict(self) -> dict:
        return {
            "N_ladder": list(self.N_ladder),
            "replications": self.replications,
            "reference": self.reference,
            "note": self.note,
            "rows": [
                {
                    "N": r.N,
                    "cost_equilibrium": r.cost_equilibrium,
                    "se_equilibrium": r.se_equilibrium,
                    "cost_deviation": r.cost_deviation,
                    "se_deviation": r.se_deviation,
                    "gap": r.gap,
                    "se_gap": r.se_gap,
                    "exact": r.exact,
                }
                for r in self.rows
            ],
        }

    def replication_rows(self) -> list[dict]:
        """One row per (N, replication)."""
        out = []
        for r in self.rows:
            if r.equilibrium_costs is None:
                out.append({"N": r.N, "replication": "", "cost_equilibrium": r.cost_equilibrium,
                            "cost_deviation": r.cost_deviation, "gap": r.gap})
                continue
            for k, (eq, dev) in enumerate(zip(r.equilibrium_costs, r.deviation_costs)):
                out.append({"N": r.N, "replication": k, "cost_equilibrium": eq, "cost_deviation": dev,
                            "gap": eq - dev})
        return out


def empirical_reference_flow(
    coeffs: CoefficientSet, grid: TimeGrid, feedback: MarkovFeedback, N: int, pilots: int, seed: int
) -> MeasureFlow:
    """Mean flow realized by the N-player system under the symmetric profile, averaged over pilot runs."""
    profile = StrategyProfile.symmetric(feedback)
    # pilot runs use replication indices past the ones the estimate consumes
    runs = [simulate_nplayer(coeffs, grid, profile, N, seed, replication=(1 << 27) + k) for k in range(pilots)]
    survival = np.mean([run.survivor_counts / N for run in runs], axis=0)
    means = np.mean([run.conditional_means for run in runs], axis=0)
    return MeasureFlow(grid=grid, survival=survival, means=means)


def estimate_nash_gap(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    mfg_solution: MeanFieldSolution,
    N: int,
    replications: int,
    seed: int,
    deviation: MarkovFeedback | None = None,
    reference: str = "limit",
    pilots: int = 10,
    workers: int | None = None,
) -> NashGapRow:
    """
    J^N_1(u^N) − J^N_1([u^{N,−1}, v]) with common random numbers.

    Both profiles replay the same streams in every replication, so the gap's
    standard error is that of the paired differences. Without an explicit
    ``deviation`` the deviating player uses the best response against the
    reference flow.
    """
    if replications < MIN_REPLICATIONS:
        raise ContractViolation(f"replications must be at least {MIN_REPLICATIONS}.")
    if reference not in REFERENCES:
        raise ContractViolation(f"Unknown deviation reference {reference!r}.")
    feedback = mfg_solution.feedback
    if deviation is None:
        flow = mfg_solution.flow
        if reference == "empirical":
            flow = empirical_reference_flow(coeffs, grid, feedback, N, pilots, seed)
        options = replace(mfg_solution.options, feedback=None)
        _, deviation = _best_response(coeffs, grid, flow, options)
    equilibrium = StrategyProfile.symmetric(feedback)
    deviating = StrategyProfile.with_deviation(feedback, deviation)

    def replicate(r):
        eq = simulate_nplayer(coeffs, grid, equilibrium, N, seed, replication=r)
        dev = simulate_nplayer(coeffs, grid, deviating, N, seed, replication=r)
        return cost_J(eq, coeffs, 0), cost_J(dev, coeffs, 0)

    pairs = ordered_map(replicate, range(replications), workers)
    eq_costs = np.array([p[0] for p in pairs])
    dev_costs = np.array([p[1] for p in pairs])
    eq_mean, eq_se = _mean_and_error(eq_costs)
    dev_mean, dev_se = _mean_and_error(dev_costs)
    gap, gap_se = _mean_and_error(eq_costs - dev_costs)
    logger.info("nash gap N=%d replications=%d gap=%.5f se=%.5f", N, replications, gap, gap_se)
    return NashGapRow(
        N=N,
        replications=replications,
        cost_equilibrium=eq_mean,
        se_equilibrium=eq_se,
        cost_deviation=dev_mean,
        se_deviation=dev_se,
        gap=gap,
        se_gap=gap_se,
        equilibrium_costs=eq_costs,
        deviation_costs=dev_costs,
    )


def exact_nash_gap_row(N: int) -> NashGapRow:
    """Gap row for the degenerate counter-example, from exact enumeration."""
    result = exact_costs(N)
    return NashGapRow(
        N=N,
        replications=0,
        cost_equilibrium=float(result.cost_equilibrium),
        se_equilibrium=0.0,
        cost_deviation=float(result.cost_deviation),
        se_deviation=0.0,
        gap=float(result.gap),
        se_gap=0.0,
        exact=True,
    )


def nash_gap_study(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    mfg_solution: MeanFieldSolution | None,
    ladder,
    replications: int,
    seed: int,
    exact: bool = False,
    **kwargs,
) -> NashGapReport:
    ladder = _check_ladder(ladder)
    if exact:
        rows = [exact_nash_gap_row(N) for N in ladder]
        return NashGapReport(N_ladder=ladder, rows=rows, replications=0, reference="exact",
                             note="Exact enumeration of the deviation v ≡ (−1, 0, 0).")
    rows = [estimate_nash_gap(coeffs, grid, mfg_solution, N, replications, seed, **kwargs) for N in ladder]
    return NashGapReport(
        N_ladder=ladder, rows=rows, replications=replications, reference=kwargs.get("reference", "limit")
    )


# ---------------------------------------------------------------------
# Propagation of chaos
# ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FunctionDictionary:
    """Fixed family of 1-Lipschitz test functions g(x), evaluated row-wise."""

    names: tuple
    functions: tuple = field(repr=False)
    seed: int | None = None

    @classmethod
    def standard(cls, coeffs: CoefficientSet, n_ridge: int = 20, seed: int = 0) -> "FunctionDictionary":
        """Coordinate maps, the components of w, and ridge functions sin(a·x + b) with |a| = 1."""
        names, functions = [], []
        for k in range(coeffs.dim_d):
            names.append(f"x{k + 1}")
            functions.append(lambda X, k=k: X[:, k])
        for k in range(coeffs.dim_d0):
            names.append(f"w{k + 1}")
            functions.append(lambda X, k=k, w=coeffs.integrand_w: w(X)[:, k])
        rng = generator(seed, 0, 0, AUXILIARY)
        for i in range(n_ridge):
            direction = rng.standard_normal(coeffs.dim_d)
            direction /= np.linalg.norm(direction)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            names.append(f"ridge{i + 1}")
            functions.append(lambda X, a=direction, b=phase: np.sin(X @ a + b))
        return cls(names=tuple(names), functions=tuple(functions), seed=seed)

    def restrict(self, names) -> "FunctionDictionary":
        keep = [i for i, name in enumerate(self.names) if name in set(names)]
        return FunctionDictionary(
            names=tuple(self.names[i] for i in keep), functions=tuple(self.functions[i] for i in keep), seed=self.seed
        )

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack([g(X) for g in self.functions], axis=1)


def expectations(source, dictionary: FunctionDictionary) -> np.ndarray:
    """
    ⟨g, law(t_j)⟩ for every grid time and dictionary function.

    ``source`` is an Ensemble (survivors' empirical law, δ₀ when nobody
    survives), a MeasureFlow carrying histograms, or a precomputed array.
    """
    if isinstance(source, Ensemble):
        origin = dictionary.evaluate(np.zeros((1, source.states.shape[2])))[0]
        rows = []
        for j in range(source.grid.n_steps + 1):
            alive = source.alive_mask(j)
            rows.append(dictionary.evaluate(source.states[j][alive]).mean(axis=0) if alive.any() else origin)
        return np.array(rows)
    if isinstance(source, MeasureFlow):
        if source.histograms is None or source.nodes is None:
            raise ContractViolation("The flow carries no histograms; solve it with the grid solver.")
        return source.histograms @ dictionary.evaluate(source.nodes)
    return np.asarray(source, dtype=float)


def chaos_distance(ensemble, mflow, dictionary: FunctionDictionary) -> float:
    """sup_j max_g |⟨g, π^N(t_j)⟩ − ⟨g, 𝔭(t_j)⟩|."""
    empirical = expectations(ensemble, dictionary)
    target = expectations(mflow, dictionary)
    if empirical.shape != target.shape:
        raise ContractViolation("Ensemble and flow must share the time grid and dictionary.")
    return float(np.max(np.abs(empirical - target))) if empirical.size else 0.0


@dataclass
class ChaosReport:
    N_ladder: list
    distances: list
    survival_gap: list
    dictionary: tuple
    dictionary_seed: int | None
    replications: int

    def as_dict(self) -> dict:
        return {
            "N_ladder": list(self.N_ladder),
            "distances": [float(v) for v in self.distances],
            "survival_gap": [float(v) for v in self.survival_gap],
            "dictionary": list(self.dictionary),
            "dictionary_seed": self.dictionary_seed,
            "replications": self.replications,
        }


def chaos_study(
    coeffs: CoefficientSet,
    grid: TimeGrid,
    mfg_solution: MeanFieldSolution,
    ladder,
    seed: int,
    replications: int = 1,
    dictionary: FunctionDictionary | None = None,
    target=None,
    workers: int | None = None,
) -> ChaosReport:
    """
    Chaos distance and survival gap per N, averaged over replications.

    ``target`` defaults to the solution's flow (which needs histograms).
    """
    ladder = _check_ladder(ladder)
    dictionary = dictionary or FunctionDictionary.standard(coeffs, seed=seed)
    target = expectations(mfg_solution.flow if target is None else target, dictionary)
    survival = mfg_solution.flow.survival
    profile = StrategyProfile.symmetric(mfg_solution.feedback)
    distances, survival_gaps = [], []
    for N in ladder:

        def one(r, N=N):
            ens = simulate_nplayer(coeffs, grid, profile, N, seed, replication=r)
            return chaos_distance(ens, target, dictionary), float(np.max(np.abs(ens.survivor_counts / N - survival)))

        results = ordered_map(one, range(replications), workers)
        distances.append(math.fsum(r[0] for r in results) / replications)
        survival_gaps.append(math.fsum(r[1] for r in results) / replications)
        logger.info("chaos N=%d distance=%.5f survival_gap=%.5f", N, distances[-1], survival_gaps[-1])
    return ChaosReport(
        N_ladder=ladder,
        distances=distances,
        survival_gap=survival_gaps,
        dictionary=dictionary.names,
        dictionary_seed=dictionary.seed,
        replications=replications,
    )


# ---------------------------------------------------------------------
# Survival lower bound
# ---------------------------------------------------------------------

class SurvivalCheck(NamedTuple):
    observed: float
    bound: float
    passed: bool | None
    verdict: str
    standard_error: float = 0.0


def driftless_survival(coeffs: CoefficientSet, grid: TimeGrid, n_paths: int, seed: int) -> float:
    """Monte Carlo ℙ(τ > T) for X = X(0) + σW started from ν."""
    zero = np.zeros(coeffs.dim_d)
    driftless = replace(
        coeffs,
        drift_bbar=ConstantDrift(tuple(zero)),
        action_space=ActionBox(lower=tuple(zero), upper=tuple(zero)),
    )
    x0s = initial_states(coeffs.initial_law, coeffs.domain, seed, 0, range(n_paths))
    flow = MeasureFlow.constant(grid, coeffs.w_at_origin())
    stats = simulate_population(driftless, grid, ConstantFeedback(tuple(zero)), flow, x0s, seed=seed)
    return float(stats.survival[-1])


def survival_lower_bound_check(
    ensemble: Ensemble, coeffs: CoefficientSet, n_paths: int = 100_000, seed: int = 0
) -> SurvivalCheck:
    """
    Final survivor fraction against c_ball·exp(−T·K²·‖σ⁻¹‖²), where c_ball is
    the squared driftless survival probability.
    """
    N = ensemble.n_players
    observed = float(ensemble.survivor_counts[-1]) / N
    se = math.sqrt(observed * (1.0 - observed) / N)
    if coeffs.sigma_is_degenerate:
        logger.warning("survival bound skipped: sigma is degenerate")
        return SurvivalCheck(observed, float("nan"), None, "degenerate: survival lower bound inapplicable", se)
    c_ball = driftless_survival(coeffs, ensemble.grid, n_paths, seed) ** 2
    inverse_norm = float(np.linalg.norm(np.linalg.inv(coeffs.sigma), 2))
    bound = c_ball * math.exp(-coeffs.horizon_T * coeffs.bound_K**2 * inverse_norm**2)
    passed = observed >= bound - 3.0 * se
    return SurvivalCheck(observed, bound, passed, "pass" if passed else "fail", se)
