from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase, tag

from meanfield.counterexample import CE7Config
from meanfield.descriptors import load_descriptor
from meanfield.exceptions import ContractViolation
from meanfield.feedback import ConstantFeedback, CounterexampleFeedback
from meanfield.flows import MeasureFlow
from meanfield.model import InitialLaw
from meanfield.sde import TimeGrid, first_exit_index, simulate_path, simulate_population, step
from meanfield.streams import NoiseStream, initial_states, stream_key

from .oracles import DESCRIPTORS, interval_survival


class TimeGridTests(SimpleTestCase):

    def test_times(self):
        grid = TimeGrid(4, 2.0)
        self.assertEqual(grid.dt, 0.5)
        np.testing.assert_allclose(grid.times, [0.0, 0.5, 1.0, 1.5, 2.0])
        self.assertEqual(grid.index_of(1.0), 2)

    def test_invalid(self):
        with self.assertRaises(ContractViolation):
            TimeGrid(0, 1.0)
        with self.assertRaises(ContractViolation):
            TimeGrid(10, 0.0)


class StreamTests(SimpleTestCase):

    def test_streams_are_keyed_by_replication_and_particle(self):
        a = NoiseStream(7, 0, 3).normals(5, 2)
        np.testing.assert_array_equal(a, NoiseStream(7, 0, 3).normals(5, 2))
        self.assertFalse(np.allclose(a, NoiseStream(7, 1, 3).normals(5, 2)))
        self.assertFalse(np.allclose(a, NoiseStream(7, 0, 4).normals(5, 2)))

    def test_purposes_do_not_share_keys(self):
        self.assertFalse(np.array_equal(stream_key(1, 0, 0, 0), stream_key(1, 0, 0, 1)))

    def test_out_of_range(self):
        with self.assertRaises(ValueError):
            stream_key(0, -1, 0)

    def test_initial_states_follow_particle_index(self):
        coeffs = CE7Config.coefficients()
        many = initial_states(coeffs.initial_law, coeffs.domain, 11, 0, range(10))
        few = initial_states(coeffs.initial_law, coeffs.domain, 11, 0, range(4))
        np.testing.assert_array_equal(many[:4], few)


class StepTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = load_descriptor(DESCRIPTORS / "coupled_1d.json")

    def test_euler_step(self):
        out = step(self.coeffs, 0.0, [0.1], [0.5], [0.3], 0.01, [2.0])
        # x + (γ + 0.2 m)·dt + σ·√dt·ξ
        self.assertAlmostEqual(out[0], 0.1 + 0.4 * 0.01 + 0.1 * 2.0)

    def test_step_rejects_bad_action_and_dt(self):
        with self.assertRaises(ContractViolation):
            step(self.coeffs, 0.0, [0.0], [0.0], [2.0], 0.01, [0.0])
        with self.assertRaises(ContractViolation):
            step(self.coeffs, 0.0, [0.0], [0.0], [0.0], 0.0, [0.0])

    def test_first_exit_index(self):
        states = np.array([[0.0], [0.5], [1.2], [0.0]])
        self.assertEqual(first_exit_index(self.coeffs.domain, states), 2)
        self.assertIsNone(first_exit_index(self.coeffs.domain, states[:2]))


class SimulatePathTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = load_descriptor(DESCRIPTORS / "coupled_1d.json")
        self.grid = TimeGrid(100, 1.0)
        self.flow = MeasureFlow.constant(self.grid, [0.0])

    def test_path_is_frozen_after_absorption(self):
        record = simulate_path(self.coeffs, self.grid, ConstantFeedback((1.0,)), self.flow, NoiseStream(0, 0, 0), [0.9])
        self.assertTrue(record.absorbed)
        k = record.absorption_index
        self.assertFalse(self.coeffs.domain.contains(record.states[k])[0])
        np.testing.assert_array_equal(record.states[k:], np.repeat(record.exit_state[None, :], len(record.states) - k, axis=0))
        np.testing.assert_array_equal(record.controls_applied[k:], 0.0)

    def test_same_stream_same_path(self):
        feedback = ConstantFeedback((0.0,))
        a = simulate_path(self.coeffs, self.grid, feedback, self.flow, NoiseStream(5, 2, 1), [0.0])
        b = simulate_path(self.coeffs, self.grid, feedback, self.flow, NoiseStream(5, 2, 1), [0.0])
        np.testing.assert_array_equal(a.states, b.states)

    def test_start_outside(self):
        with self.assertRaises(ContractViolation):
            simulate_path(self.coeffs, self.grid, ConstantFeedback((0.0,)), self.flow, NoiseStream(0, 0, 0), [1.0])

    def test_bridge_needs_box(self):
        coeffs = CE7Config.coefficients()
        grid = TimeGrid(20, 2.0)
        flow = MeasureFlow.constant(grid, [0.0])
        with self.assertRaises(ContractViolation):
            simulate_path(coeffs, grid, CounterexampleFeedback(), flow, NoiseStream(0, 0, 0), [1.0, 1.0, 0.0], bridge=True)


class CounterexampleFeedbackTests(SimpleTestCase):

    def test_needs_initial_states_before_the_switch(self):
        with self.assertRaisesMessage(ContractViolation, "needs initial states"):
            CounterexampleFeedback()(0.0, np.zeros((1, 3)))

    def test_after_the_switch_initial_states_are_not_needed(self):
        np.testing.assert_array_equal(CounterexampleFeedback()(1.5, np.zeros((2, 3))), [[-1.0, 0.0, 0.0]] * 2)

    def test_clips_the_initial_coordinate(self):
        actions = CounterexampleFeedback()(0.5, np.zeros((2, 3)), X0=[[3.0, 0.0, 0.0], [-0.5, 0.0, 0.0]])
        np.testing.assert_array_equal(actions[:, 0], [1.0, -0.5])


class PopulationTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = load_descriptor(DESCRIPTORS / "exit_time_1d.json")
        self.grid = TimeGrid(50, 1.0)
        self.flow = MeasureFlow.constant(self.grid, [0.0])

    def test_chunking_does_not_change_results(self):
        x0s = np.zeros((300, 1))
        feedback = ConstantFeedback((0.0,))
        small = simulate_population(self.coeffs, self.grid, feedback, self.flow, x0s, seed=4, chunk=37)
        large = simulate_population(self.coeffs, self.grid, feedback, self.flow, x0s, seed=4, chunk=1000)
        np.testing.assert_array_equal(small.alive_count, large.alive_count)
        np.testing.assert_allclose(small.costs, large.costs)

    def test_exit_time_cost_is_stopping_time(self):
        # f = 1, F = 0: cost is τ ∧ T on the grid
        x0s = np.zeros((200, 1))
        stats = simulate_population(self.coeffs, self.grid, ConstantFeedback((0.0,)), self.flow, x0s, seed=1)
        stopped = np.where(stats.absorption < 0, self.grid.n_steps, stats.absorption)
        np.testing.assert_allclose(stats.costs, stopped * self.grid.dt)

    def test_exact_population_has_no_standard_error(self):
        coeffs = CE7Config.coefficients()
        grid = TimeGrid(20, 2.0)
        flow = MeasureFlow.constant(grid, [0.0])
        points, weights = coeffs.initial_law.atoms()
        stats = simulate_population(coeffs, grid, CounterexampleFeedback(), flow, points, weights=weights)
        self.assertTrue(stats.exact)
        self.assertEqual(stats.cost_standard_error, 0.0)
        # players starting at x1 = 1 reach the cap at t = 1
        self.assertAlmostEqual(stats.survival[10], 0.5)
        self.assertAlmostEqual(stats.survival[9], 1.0)
        np.testing.assert_allclose(stats.conditional_means(), 0.0, atol=1e-12)

    @tag("slow")
    def test_survival_matches_interval_series(self):
        grid = TimeGrid(200, 1.0)
        flow = MeasureFlow.constant(grid, [0.0])
        x0s = np.zeros((20_000, 1))
        stats = simulate_population(self.coeffs, grid, ConstantFeedback((0.0,)), flow, x0s, seed=9, bridge=True)
        expected = interval_survival(0.0, 1.0, 1.0, 1.0)
        self.assertAlmostEqual(stats.survival[-1], expected, delta=0.02)

    @tag("slow")
    def test_discrete_monitoring_overstates_survival(self):
        grid = TimeGrid(20, 1.0)
        flow = MeasureFlow.constant(grid, [0.0])
        x0s = np.zeros((20_000, 1))
        plain = simulate_population(self.coeffs, grid, ConstantFeedback((0.0,)), flow, x0s, seed=9)
        bridged = simulate_population(self.coeffs, grid, ConstantFeedback((0.0,)), flow, x0s, seed=9, bridge=True)
        self.assertGreater(plain.survival[-1], bridged.survival[-1])

    def test_uniform_initial_law_population(self):
        coeffs = replace(self.coeffs, initial_law=InitialLaw("uniform_on_box", {"lower": [-0.5], "upper": [0.5]}))
        x0s = initial_states(coeffs.initial_law, coeffs.domain, 0, 0, range(100))
        self.assertTrue(((x0s > -0.5) & (x0s < 0.5)).all())
