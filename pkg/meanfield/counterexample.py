"""
Degenerate-noise game where the mean field solution does not induce
approximate Nash equilibria.

Data: d = 3, d0 = 1, T = 2, Γ = [−1, 1] × {0} × {0}, b̄ = (−|y| ∧ ¼, 0, 1),
σ = 0, f ≡ 1, F = 1 + (x₃/12)·x₁, w = x₂, ν = Rademacher ⊗ Rademacher ⊗ δ₀,
O = (−4, 5) × (−2, 2) × (−1, 2.2) ∩ {x₁ < 1 + exp(x₃ − 1)}.
Coordinates are 0-based in code: x₁ is column 0, x₂ column 1, x₃ column 2.

The third coordinate is time. Under the strategy u* every player pushes x₁
with its initial sign until t = 1 and then with −1, so a player starting at
x₁ = 1 touches the cap x₁ = 2 at t = 1 exactly when the mean term vanishes on
[0, 1], i.e. when Σ ξ₂ = 0. Every quantity below is exact rational
arithmetic over the sign configurations.
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .catalog import BilinearTerminal, ClippedCoordinateIntegrand, ConstantCost, SaturatedMeanDrift
from .exceptions import ContractViolation
from .feedback import ConstantFeedback, CounterexampleFeedback
from .model import AbsorbingDomain, ActionBox, CoefficientSet, InitialLaw
from .nplayer import StrategyProfile, cost_J, simulate_nplayer
from .parallel import ordered_map
from .sde import TimeGrid

logger = logging.getLogger(__name__)

HORIZON = 2
CAP = Fraction(1, 4)
SLOPE = Fraction(1, 12)
BOX_LOWER = (-4.0, -2.0, -1.0)
BOX_UPPER = (5.0, 2.0, 2.2)
DEVIATION_ACTION = (-1.0, 0.0, 0.0)


# ---------------------------------------------------------------------
# Configuration and result
# ---------------------------------------------------------------------

@dataclass(frozen=True)
class CE7Config:
    N: int = 3

    def __post_init__(self):
        if int(self.N) < 1:
            raise ContractViolation("N must be >= 1.")

    @staticmethod
    def domain() -> AbsorbingDomain:
        return AbsorbingDomain(
            "capped_box",
            {
                "lower": list(BOX_LOWER),
                "upper": list(BOX_UPPER),
                "caps": [{"coordinate": 0, "offset": 1.0, "scale": 1.0, "source": 2, "shift": 1.0}],
            },
        )

    @staticmethod
    def initial_law() -> InitialLaw:
        return InitialLaw("product_of_atoms", {"atoms": [[-1.0, 1.0], [-1.0, 1.0], [0.0]]})

    @classmethod
    def coefficients(cls) -> CoefficientSet:
        return CoefficientSet(
            dim_d=3,
            dim_d0=1,
            horizon_T=float(HORIZON),
            sigma=np.zeros((3, 3)),
            drift_bbar=SaturatedMeanDrift(offset=(0.0, 0.0, 1.0), coordinate=0, cap=float(CAP)),
            integrand_w=ClippedCoordinateIntegrand(indices=(1,), bound=2.0),
            running_cost_f=ConstantCost(1.0),
            terminal_cost_F=BilinearTerminal(
                offset=1.0, scale=float(SLOPE), first=2, second=0, lower=BOX_LOWER, upper=BOX_UPPER
            ),
            action_space=ActionBox(lower=(-1.0, 0.0, 0.0), upper=(1.0, 0.0, 0.0)),
            domain=cls.domain(),
            bound_K=4.0,
            lipschitz_Lbar=1.0,
            initial_law=cls.initial_law(),
            name="counterexample",
        )

    @staticmethod
    def equilibrium_profile() -> StrategyProfile:
        return StrategyProfile.counterexample(dim=3)

    @staticmethod
    def deviation_profile() -> StrategyProfile:
        return StrategyProfile.with_deviation(CounterexampleFeedback(dim=3), ConstantFeedback(DEVIATION_ACTION))


@dataclass(frozen=True)
class CE7Result:
    N: int
    cost_equilibrium: Fraction
    cost_deviation: Fraction
    gap: Fraction
    mean_term: Fraction
    exit_probability: Fraction

    def as_row(self) -> dict:
        row = {"N": self.N}
        for name in ("cost_equilibrium", "cost_deviation", "gap", "mean_term", "exit_probability"):
            value = getattr(self, name)
            row[name] = f"{value.numerator}/{value.denominator}"
            row[f"{name}_decimal"] = repr(float(value))
        return row


# ---------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------

def _mean_term(total: int, count: int) -> Fraction:
    """|total / count| ∧ ¼, with the δ₀ convention (0) when count = 0."""
    if count == 0:
        return Fraction(0)
    return min(Fraction(abs(total), count), CAP)


def exact_mean_term(N: int) -> Fraction:
    """E[|S_N / N| ∧ ¼] for S_N a sum of N independent signs."""
    if N < 1:
        raise ContractViolation("N must be >= 1.")
    total = sum(math.comb(N, k) * _mean_term(2 * k - N, N) for k in range(N + 1))
    return Fraction(total, 2**N)


def exit_probability(N: int) -> Fraction:
    """ℙ(Σ ξ₂ = 0): the probability that the u* players starting at x₁ = 1 leave at t = 1."""
    if N < 1:
        raise ContractViolation("N must be >= 1.")
    if N % 2:
        return Fraction(0)
    return Fraction(math.comb(N, N // 2), 2**N)


def exit_probability_by_enumeration(N: int) -> Fraction:
    if N < 1:
        raise ContractViolation("N must be >= 1.")
    hits = sum(1 for mask in range(1 << N) if 2 * mask.bit_count() == N)
    return Fraction(hits, 1 << N)


def exact_costs(N: int) -> CE7Result:
    """Costs of player 1 under u* and under the deviation v ≡ (−1, 0, 0); odd N only."""
    if N < 1:
        raise ContractViolation("N must be >= 1.")
    if N % 2 == 0:
        raise ContractViolation(
            f"N = {N} is even: players can exit at t = 1, use brute_force_costs or exit_probability."
        )
    c = exact_mean_term(N)
    equilibrium = 3 - Fraction(1, 6) - c / 3
    deviation = 3 - Fraction(1, 3) - c / 3
    return CE7Result(
        N=N,
        cost_equilibrium=equilibrium,
        cost_deviation=deviation,
        gap=equilibrium - deviation,
        mean_term=c,
        exit_probability=Fraction(0),
    )


# ---------------------------------------------------------------------
# Path formulas and enumeration
# ---------------------------------------------------------------------

def _survivor_cost(x1_at_T: Fraction) -> Fraction:
    """Running cost over [0, T] plus F(T, x) with x₃ = T."""
    return HORIZON + 1 + SLOPE * HORIZON * x1_at_T


def _exit_cost() -> Fraction:
    """Exit at t = 1 with x₁ = 2, x₃ = 1."""
    return 1 + 1 + SLOPE * 1 * 2


def player_cost(xi1: int, deviates: bool, early: Fraction, late: Fraction, exits: bool) -> Fraction:
    """
    Realized cost of one player.

    ``early`` / ``late`` are the mean terms |m| ∧ ¼ on [0, 1) and [1, 2];
    ``exits`` marks the exit at t = 1 (only possible for u* with ξ₁ = 1 and
    early = 0).
    """
    if exits:
        return _exit_cost()
    control_early = -1 if deviates else xi1
    x1 = xi1 + control_early - early - 1 - late
    return _survivor_cost(Fraction(x1))


def _player0_key(N: int, xi1_mask: int, xi2_mask: int, deviates: bool) -> tuple:
    full = (1 << N) - 1
    xi1 = 1 if xi1_mask & 1 else -1
    total = 2 * xi2_mask.bit_count() - N
    if total != 0:
        return (xi1, abs(total), N, abs(total), N, False)
    # Σξ₂ = 0: every u* player with ξ₁ = 1 leaves at t = 1.
    stayers = full & ~xi1_mask
    if deviates:
        stayers |= 1
    count = stayers.bit_count()
    late_total = 2 * (stayers & xi2_mask).bit_count() - count
    exits = not deviates and xi1 == 1
    return (xi1, 0, N, abs(late_total), count, exits)


def brute_force_costs(N: int) -> CE7Result:
    """
    Expected costs of player 1 by enumerating all 2^{2N} sign configurations.

    Works for every N: for even N the configurations with Σ ξ₂ = 0 trigger the
    exits at t = 1 and the survivors' mean term is recomputed afterwards.
    """
    if N < 1:
        raise ContractViolation("N must be >= 1.")
    outcome = {}
    for deviates in (False, True):
        tally = Counter(
            _player0_key(N, m1, m2, deviates) for m1 in range(1 << N) for m2 in range(1 << N)
        )
        total = Fraction(0)
        for (xi1, early_num, early_den, late_num, late_den, exits), count in tally.items():
            cost = player_cost(xi1, deviates, _mean_term(early_num, early_den), _mean_term(late_num, late_den), exits)
            total += count * cost
        outcome[deviates] = total / 4**N
    return CE7Result(
        N=N,
        cost_equilibrium=outcome[False],
        cost_deviation=outcome[True],
        gap=outcome[False] - outcome[True],
        mean_term=exact_mean_term(N),
        exit_probability=exit_probability(N),
    )


def gap_lower_bound(N: int) -> Fraction:
    """1/6 − (1/3)(1/4 − mean_term): the gap for odd N written as a distance from 1/12."""
    return Fraction(1, 6) - (CAP - exact_mean_term(N)) / 3


# ---------------------------------------------------------------------
# Limit game
# ---------------------------------------------------------------------

def zeta(xi1: int, exits: bool, c: Fraction = Fraction(0)) -> Fraction:
    """Realized limit cost of one branch against a flow with constant mean term c."""
    if exits:
        if c != 0 or xi1 != 1:
            raise ContractViolation("Only ξ₁ = 1 against a zero mean term reaches the cap at t = 1.")
        return _exit_cost()
    return player_cost(xi1, True, c, c, False)


def limit_value(c: Fraction = Fraction(0)) -> Fraction:
    """
    V(ν; 𝔭) against a flow whose mean term is the constant c ∈ [0, ¼].

    With c > 0 the cap is out of reach and the optimal control is −1
    throughout; with c = 0 the ξ₁ = 1 branch exits at t = 1 instead.
    """
    c = Fraction(c)
    if not 0 <= c <= CAP:
        raise ContractViolation("The mean term lies in [0, 1/4].")
    up = min(zeta(1, False, c), zeta(1, True)) if c == 0 else zeta(1, False, c)
    down = zeta(-1, False, c)
    return (up + down) / 2


def limit_cost() -> Fraction:
    """Optimal limit cost against the equilibrium flow (mean ≡ 0): 7/3."""
    return limit_value(Fraction(0))


# ---------------------------------------------------------------------
# Simulator cross-check
# ---------------------------------------------------------------------

def configurations(N: int) -> list[np.ndarray]:
    """All 4^N initial configurations, each of shape (N, 3)."""
    out = []
    for m1 in range(1 << N):
        for m2 in range(1 << N):
            x0 = np.zeros((N, 3))
            x0[:, 0] = [1.0 if m1 >> i & 1 else -1.0 for i in range(N)]
            x0[:, 1] = [1.0 if m2 >> i & 1 else -1.0 for i in range(N)]
            out.append(x0)
    return out


def simulated_costs(N: int, n_steps: int, workers: int | None = None) -> tuple[float, float]:
    """
    Mean cost of player 1 under u* and under the deviation, from the N-player
    simulator run once on every initial configuration.
    """
    coeffs = CE7Config.coefficients()
    grid = TimeGrid(n_steps, float(HORIZON))
    eq_profile = CE7Config.equilibrium_profile()
    dev_profile = CE7Config.deviation_profile()

    def both(x0):
        eq = simulate_nplayer(coeffs, grid, eq_profile, N, seed=0, x0=x0)
        dev = simulate_nplayer(coeffs, grid, dev_profile, N, seed=0, x0=x0)
        return cost_J(eq, coeffs, 0), cost_J(dev, coeffs, 0)

    results = ordered_map(both, configurations(N), workers)
    equilibrium = math.fsum(r[0] for r in results) / len(results)
    deviation = math.fsum(r[1] for r in results) / len(results)
    logger.info("simulated counterexample N=%d n_steps=%d eq=%.6f dev=%.6f", N, n_steps, equilibrium, deviation)
    return equilibrium, deviation
