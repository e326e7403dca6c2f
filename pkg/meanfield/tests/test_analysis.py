import math

import numpy as np
from django.test import SimpleTestCase, tag

from meanfield.analysis import (
    FunctionDictionary,
    chaos_distance,
    chaos_study,
    estimate_nash_gap,
    expectations,
    nash_gap_study,
    survival_lower_bound_check,
)
from meanfield.counterexample import CE7Config
from meanfield.descriptors import load_descriptor
from meanfield.exceptions import ContractViolation
from meanfield.feedback import ConstantFeedback, CounterexampleFeedback
from meanfield.flows import MeasureFlow
from meanfield.mfg import SolverOptions, solve_mfg
from meanfield.nplayer import StrategyProfile, simulate_nplayer
from meanfield.sde import TimeGrid

from .oracles import DESCRIPTORS


class ExactStudyTests(SimpleTestCase):

    def test_exact_rows(self):
        report = nash_gap_study(None, None, None, [1, 3, 5], replications=0, seed=0, exact=True)
        self.assertEqual(report.reference, "exact")
        self.assertEqual(report.gap, [1 / 6] * 3)
        self.assertAlmostEqual(report.cost_equilibrium[1][0], 33 / 12)
        self.assertEqual(report.cost_equilibrium[1][1], 0.0)
        rows = report.replication_rows()
        self.assertEqual([row["N"] for row in rows], [1, 3, 5])
        self.assertEqual(report.as_dict()["rows"][2]["exact"], True)

    def test_ladder_must_increase(self):
        with self.assertRaises(ContractViolation):
            nash_gap_study(None, None, None, [3, 3], replications=0, seed=0, exact=True)
        with self.assertRaises(ContractViolation):
            nash_gap_study(None, None, None, [], replications=0, seed=0, exact=True)


class CounterexampleGapTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = CE7Config.coefficients()
        self.grid = TimeGrid(20, 2.0)
        self.solution = solve_mfg(self.coeffs, self.grid, SolverOptions(mode="exact", feedback=CounterexampleFeedback()))

    def test_needs_enough_replications(self):
        with self.assertRaises(ContractViolation):
            estimate_nash_gap(self.coeffs, self.grid, self.solution, 3, replications=29, seed=0,
                              deviation=ConstantFeedback((-1.0, 0.0, 0.0)))

    def test_unknown_reference(self):
        with self.assertRaises(ContractViolation):
            estimate_nash_gap(self.coeffs, self.grid, self.solution, 3, replications=30, seed=0, reference="oracle")

    def test_paired_gaps(self):
        row = estimate_nash_gap(self.coeffs, self.grid, self.solution, 3, replications=40, seed=12,
                                deviation=ConstantFeedback((-1.0, 0.0, 0.0)))
        self.assertEqual(row.replications, 40)
        profile = StrategyProfile.symmetric(CounterexampleFeedback())
        for r, gap in enumerate(row.equilibrium_costs - row.deviation_costs):
            # the mean term is ¼ for odd N, so only player 1's initial sign matters
            xi1 = simulate_nplayer(self.coeffs, self.grid, profile, 3, 12, replication=r).states[0, 0, 0]
            self.assertAlmostEqual(gap, (xi1 + 1.0) / 6.0, places=9)
        self.assertAlmostEqual(row.gap, float(np.mean(row.equilibrium_costs - row.deviation_costs)))
        self.assertGreater(row.se_gap, 0.0)

    def test_study_rows_per_replication(self):
        report = nash_gap_study(self.coeffs, self.grid, self.solution, [1, 3], replications=30, seed=2,
                                deviation=ConstantFeedback((-1.0, 0.0, 0.0)))
        self.assertEqual(report.reference, "limit")
        rows = report.replication_rows()
        self.assertEqual(len(rows), 60)
        self.assertEqual(rows[30]["N"], 3)
        self.assertEqual(rows[30]["replication"], 0)


class DictionaryTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = CE7Config.coefficients()

    def test_standard_names(self):
        dictionary = FunctionDictionary.standard(self.coeffs, n_ridge=3, seed=4)
        self.assertEqual(dictionary.names, ("x1", "x2", "x3", "w1", "ridge1", "ridge2", "ridge3"))
        again = FunctionDictionary.standard(self.coeffs, n_ridge=3, seed=4)
        X = np.array([[0.3, -0.2, 0.1]])
        np.testing.assert_array_equal(dictionary.evaluate(X), again.evaluate(X))

    def test_restrict_and_evaluate(self):
        dictionary = FunctionDictionary.standard(self.coeffs, n_ridge=2).restrict(["x1", "w1"])
        self.assertEqual(dictionary.names, ("x1", "w1"))
        np.testing.assert_allclose(dictionary.evaluate([[1.0, 3.0, 0.0]]), [[1.0, 2.0]])

    def test_ridge_functions_are_lipschitz(self):
        dictionary = FunctionDictionary.standard(self.coeffs, n_ridge=5).restrict([f"ridge{i}" for i in range(1, 6)])
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
        ratio = np.abs(dictionary.evaluate(X) - dictionary.evaluate(Y)) / np.linalg.norm(X - Y, axis=1)[:, None]
        self.assertLessEqual(ratio.max(), 1.0 + 1e-12)


class ChaosDistanceTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = CE7Config.coefficients()
        self.grid = TimeGrid(20, 2.0)
        self.dictionary = FunctionDictionary.standard(self.coeffs, n_ridge=0).restrict(["x3"])
        self.ensemble = simulate_nplayer(self.coeffs, self.grid, CE7Config.equilibrium_profile(), 3, seed=1)

    def test_third_coordinate_is_time(self):
        # every survivor has x3 = t
        np.testing.assert_allclose(expectations(self.ensemble, self.dictionary)[:, 0], self.grid.times, atol=1e-12)
        self.assertLess(chaos_distance(self.ensemble, self.grid.times[:, None], self.dictionary), 1e-12)

    def test_shape_mismatch(self):
        with self.assertRaises(ContractViolation):
            chaos_distance(self.ensemble, np.zeros((5, 1)), self.dictionary)

    def test_flow_needs_histograms(self):
        with self.assertRaises(ContractViolation):
            expectations(MeasureFlow.constant(self.grid, [0.0]), self.dictionary)

    def test_flow_with_histograms(self):
        grid = TimeGrid(2, 1.0)
        nodes = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        flow = MeasureFlow(grid, np.ones(3), np.zeros(3), histograms=[[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]], nodes=nodes)
        x1 = FunctionDictionary.standard(self.coeffs, n_ridge=0).restrict(["x1"])
        np.testing.assert_allclose(expectations(flow, x1)[:, 0], [0.0, 0.5, 1.0])


class SurvivalCheckTests(SimpleTestCase):

    def test_degenerate_noise(self):
        coeffs = CE7Config.coefficients()
        ensemble = simulate_nplayer(coeffs, TimeGrid(20, 2.0), CE7Config.equilibrium_profile(), 4, seed=0)
        check = survival_lower_bound_check(ensemble, coeffs)
        self.assertIsNone(check.passed)
        self.assertEqual(check.verdict, "degenerate: survival lower bound inapplicable")
        self.assertTrue(math.isnan(check.bound))

    def test_nondegenerate_noise(self):
        coeffs = load_descriptor(DESCRIPTORS / "exit_time_1d.json")
        ensemble = simulate_nplayer(coeffs, TimeGrid(50, 1.0), StrategyProfile.constant((0.0,)), 400, seed=3)
        check = survival_lower_bound_check(ensemble, coeffs, n_paths=2000, seed=1)
        self.assertTrue(check.passed)
        self.assertEqual(check.verdict, "pass")
        self.assertTrue(0.0 < check.bound < check.observed)


@tag("slow")
class ChaosStudyTests(SimpleTestCase):

    def test_coupled_study(self):
        coeffs = load_descriptor(DESCRIPTORS / "coupled_1d.json")
        grid = TimeGrid(100, 1.0)
        solution = solve_mfg(coeffs, grid, SolverOptions(space_nodes=41), tol=1e-5)
        report = chaos_study(coeffs, grid, solution, [10, 200], seed=3, replications=8)
        self.assertEqual(len(report.distances), 2)
        self.assertTrue(all(d >= 0.0 for d in report.distances))
        self.assertLess(report.distances[1], report.distances[0])
        self.assertLess(report.survival_gap[1], report.survival_gap[0] + 0.05)
        self.assertEqual(report.as_dict()["dictionary"][:2], ["x1", "w1"])
