from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, override_settings, tag
from scipy.integrate import trapezoid

from meanfield.catalog import AbsControlCost, ConstantCost, ConstantDrift, DoubleWellCost
from meanfield.counterexample import CE7Config
from meanfield.descriptors import load_descriptor, parse_descriptor
from meanfield.exceptions import ContractViolation, ExtinctionError, SolverConfigurationError
from meanfield.flows import MeasureFlow
from meanfield.hjb_kfp import (
    SpaceGrid,
    hamiltonian_min,
    initial_density,
    minimize_hamiltonian,
    renormalize,
    solve_hjb,
    solve_kfp,
    stability_ratio,
)
from meanfield.mfg import value_at_initial_law
from meanfield.model import AbsorbingDomain
from meanfield.sde import TimeGrid

from .oracles import DESCRIPTORS, interval_survival

PLANE = {
    "name": "plane",
    "dim_d": 2,
    "dim_d0": 2,
    "horizon_T": "1",
    "sigma": [["0.5", "0"], ["0", "0.5"]],
    "drift": {"family": "constant", "params": {"vector": ["0", "0"]}},
    "w": {"family": "coordinates", "params": {"indices": [0, 1]}},
    "f": {"family": "quadratic", "params": {"control_weight": "1", "state_weight": "1"}},
    "F": {"family": "constant", "params": {"value": "0"}},
    "action_space": {"lower": ["-1", "-1"], "upper": ["1", "1"]},
    "domain": {"kind": "box", "parameters": {"lower": ["-1", "-1"], "upper": ["1", "1"]}},
    "initial_law": {"kind": "dirac", "parameters": {"point": ["0", "0"]}},
    "bound_K": "2",
    "lipschitz_Lbar": "0",
}


def expected_exit_time(horizon: float, samples: int = 2001) -> float:
    """E[τ ∧ T] for a standard Brownian motion started at 0 in (−1, 1)."""
    times = np.linspace(0.0, horizon, samples)
    values = [interval_survival(0.0, t, 1.0, 1.0) if t > 0 else 1.0 for t in times]
    return float(trapezoid(values, times))


class SpaceGridTests(SimpleTestCase):

    def setUp(self):
        self.domain = AbsorbingDomain("box", {"lower": [-1.0], "upper": [1.0]})

    def test_outer_layer_is_boundary(self):
        grid = SpaceGrid.for_domain(self.domain, 11)
        self.assertEqual(grid.shape, (11,))
        self.assertFalse(grid.interior[0])
        self.assertFalse(grid.interior[-1])
        self.assertTrue(grid.interior[1:-1].all())
        self.assertAlmostEqual(grid.cell_volume, 0.2)

    def test_rejects_three_dimensions_and_coarse_grids(self):
        with self.assertRaises(SolverConfigurationError):
            SpaceGrid.for_domain(CE7Config.domain(), 11)
        with self.assertRaises(SolverConfigurationError):
            SpaceGrid.for_domain(self.domain, 2)

    def test_flux_divergence_conserves_mass(self):
        grid = SpaceGrid.for_domain(self.domain, 21)
        m = np.where(grid.interior, np.linspace(0.0, 1.0, 21), 0.0)
        B = np.sin(np.linspace(0.0, 6.0, 21))[:, None]
        self.assertAlmostEqual(grid.flux_divergence(m, B).sum(), 0.0, places=12)

    def test_diffusion_system_keeps_boundary_rows(self):
        grid = SpaceGrid.for_domain(self.domain, 5)
        matrix = grid.diffusion_system(np.array([0.5]), 0.1).toarray()
        np.testing.assert_array_equal(matrix[0], [1.0, 0.0, 0.0, 0.0, 0.0])
        self.assertAlmostEqual(matrix[2].sum(), 1.0)

    def test_point_mass_split(self):
        grid = SpaceGrid.for_domain(self.domain, 11)
        weights = dict(grid.interpolation_weights([0.05]))
        self.assertEqual(sorted(weights), [5, 6])
        self.assertAlmostEqual(weights[5], 0.75)
        self.assertAlmostEqual(sum(weights.values()), 1.0)


class HamiltonianTests(SimpleTestCase):

    def setUp(self):
        self.coupled = load_descriptor(DESCRIPTORS / "coupled_1d.json")

    def test_quadratic_rule_clamps(self):
        G, _ = minimize_hamiltonian(self.coupled, 0.0, np.zeros((3, 1)), np.zeros(1), np.array([[1.0], [4.0], [-6.0]]))
        np.testing.assert_allclose(G[:, 0], [-0.5, -1.0, 1.0])

    def test_hamiltonian_value(self):
        gamma, H = hamiltonian_min(self.coupled, 0.0, [0.5], [1.0], [1.0])
        # f = γ² + x², b = γ + 0.2·m
        self.assertAlmostEqual(gamma[0], -0.5)
        self.assertAlmostEqual(H, 0.25 + 0.25 + (-0.5 + 0.2))

    def test_independent_rule_is_bang_bang_with_rest_on_ties(self):
        coeffs = CE7Config.coefficients()
        P = np.array([[2.0, 5.0, 0.0], [-0.1, 0.0, 0.0], [0.0, 1.0, 1.0]])
        G, _ = minimize_hamiltonian(coeffs, 0.0, np.zeros((3, 3)), np.zeros(1), P)
        np.testing.assert_array_equal(G, [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def test_separable_rule(self):
        coeffs = replace(self.coupled, running_cost_f=AbsControlCost(control_weight=1.0))
        P = np.array([[2.0], [-2.0], [0.5], [1.0]])
        G, _ = minimize_hamiltonian(coeffs, 0.0, np.zeros((4, 1)), np.zeros(1), P)
        np.testing.assert_allclose(G[:, 0], [-1.0, 1.0, 0.0, 0.0], atol=1e-8)

    def test_grid_rule_breaks_ties_towards_smaller_coordinates(self):
        coeffs = replace(self.coupled, running_cost_f=DoubleWellCost(weight=1.0))
        G, H = minimize_hamiltonian(coeffs, 0.0, np.zeros((2, 1)), np.zeros(1), np.array([[0.0], [0.5]]))
        np.testing.assert_allclose(G[:, 0], [-1.0, -1.0])
        self.assertAlmostEqual(H[1], -0.5)

    def test_grid_rule_can_be_disabled(self):
        coeffs = replace(self.coupled, running_cost_f=DoubleWellCost(weight=1.0))
        with override_settings(MEANFIELD={"HAMILTONIAN_GRID_FALLBACK": False}):
            with self.assertRaises(SolverConfigurationError):
                minimize_hamiltonian(coeffs, 0.0, np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)))

    def test_unknown_rule(self):
        with self.assertRaises(SolverConfigurationError):
            minimize_hamiltonian(self.coupled, 0.0, np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)), rule="newton")


class ExitTimeTests(SimpleTestCase):
    """f = 1, F = 0, Γ = {0}: the value is E[τ ∧ T] and the mass is ℙ(τ > t)."""

    def setUp(self):
        self.coeffs = load_descriptor(DESCRIPTORS / "exit_time_1d.json")
        self.grid = TimeGrid(200, 1.0)
        self.space = SpaceGrid.for_domain(self.coeffs.domain, 101)
        self.flow = MeasureFlow.constant(self.grid, [0.0])

    def test_stability_guard(self):
        self.assertLessEqual(stability_ratio(self.coeffs, self.grid, self.space), 1.0)
        with self.assertRaisesMessage(SolverConfigurationError, "Time step too large"):
            solve_hjb(self.coeffs, TimeGrid(10, 1.0), self.space, self.flow)

    def test_value_is_expected_exit_time(self):
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        self.assertAlmostEqual(value_at_initial_law(field, self.coeffs.initial_law), expected_exit_time(1.0), delta=0.01)
        self.assertEqual(field.values[0][0], 0.0)
        np.testing.assert_array_equal(field.feedback, 0.0)

    def test_mass_is_survival_probability(self):
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        density = solve_kfp(self.coeffs, self.grid, self.space, field, initial_density(self.coeffs.initial_law, self.space))
        self.assertAlmostEqual(density.masses[0], 1.0)
        self.assertTrue(np.all(np.diff(density.masses) <= 1e-12))
        self.assertTrue(np.all(density.densities >= 0.0))
        for j in (100, 200):
            expected = interval_survival(0.0, self.grid.times[j], 1.0, 1.0)
            self.assertAlmostEqual(density.masses[j], expected, delta=0.01)

    def test_renormalize(self):
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        density = solve_kfp(self.coeffs, self.grid, self.space, field, initial_density(self.coeffs.initial_law, self.space))
        flow = renormalize(density, self.coeffs)
        self.assertEqual(flow.survival[0], 1.0)
        np.testing.assert_allclose(flow.histograms.sum(axis=1), 1.0)
        np.testing.assert_allclose(flow.means, 0.0, atol=1e-9)
        with self.assertRaises(ExtinctionError) as ctx:
            renormalize(density, self.coeffs, mass_floor=0.5)
        self.assertGreater(ctx.exception.first_index, 0)

    def test_masses_use_trapezoid_rule(self):
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        density = solve_kfp(self.coeffs, self.grid, self.space, field, initial_density(self.coeffs.initial_law, self.space))
        x = self.space.axes[0]
        expected = [trapezoid(row, x) for row in density.densities]
        np.testing.assert_allclose(density.masses, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(density.masses, density.densities.sum(axis=1) * self.space.cell_volume, atol=1e-12)

    def test_value_is_monotone_in_running_cost(self):
        base = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        doubled = replace(self.coeffs, running_cost_f=ConstantCost(2.0))
        dearer = solve_hjb(doubled, self.grid, self.space, self.flow)
        self.assertTrue(np.all(dearer.values >= base.values - 1e-12))
        # with Γ = {0} the scheme is linear in f
        np.testing.assert_allclose(dearer.values, 2.0 * base.values, atol=1e-10)

    def test_outward_drift_empties_the_domain(self):
        # no noise and drift 2 to the right: everything exits well before T = 1
        outward = replace(self.coeffs, sigma=np.zeros((1, 1)), drift_bbar=ConstantDrift((2.0,)), bound_K=2.0)
        self.assertAlmostEqual(stability_ratio(outward, self.grid, self.space), 0.5)
        field = solve_hjb(outward, self.grid, self.space, self.flow)
        density = solve_kfp(outward, self.grid, self.space, field, initial_density(outward.initial_law, self.space))
        self.assertAlmostEqual(density.masses[0], 1.0)
        self.assertLess(density.masses[-1], 1e-8)
        self.assertTrue(np.all(np.diff(density.masses) <= 1e-12))
        with self.assertRaises(ExtinctionError) as ctx:
            renormalize(density, outward)
        self.assertGreater(ctx.exception.first_index, 50)

    def test_negative_initial_density(self):
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        bad = -np.ones(self.space.size)
        with self.assertRaises(ContractViolation):
            solve_kfp(self.coeffs, self.grid, self.space, field, bad)

    def test_initial_density_is_normalised(self):
        m0 = initial_density(self.coeffs.initial_law, self.space)
        self.assertAlmostEqual(m0.sum() * self.space.cell_volume, 1.0)
        self.assertEqual(m0[0], 0.0)


@tag("slow")
class PlaneTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = parse_descriptor(PLANE)
        self.grid = TimeGrid(100, 1.0)
        self.space = SpaceGrid.for_domain(self.coeffs.domain, 21)
        self.flow = MeasureFlow.constant(self.grid, [0.0, 0.0])

    def test_symmetric_problem_keeps_zero_mean(self):
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        density = solve_kfp(self.coeffs, self.grid, self.space, field, initial_density(self.coeffs.initial_law, self.space))
        flow = renormalize(density, self.coeffs)
        self.assertLess(np.abs(flow.means).max(), 1e-6)
        self.assertLess(flow.survival[-1], 1.0)

    def test_feedback_heads_for_the_nearest_exit(self):
        # running cost is positive and the exit is free, so leaving early pays
        field = solve_hjb(self.coeffs, self.grid, self.space, self.flow)
        feedback = field.feedback_function()
        actions = feedback(0.0, np.array([[0.5, 0.0], [-0.5, 0.0]]))
        self.assertGreater(actions[0, 0], 0.0)
        self.assertLess(actions[1, 0], 0.0)
        self.assertTrue(np.all(np.abs(actions) <= 1.0))
