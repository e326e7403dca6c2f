from dataclasses import replace

import numpy as np
from django.test import SimpleTestCase

from meanfield.counterexample import CE7Config
from meanfield.descriptors import load_descriptor
from meanfield.exceptions import ContractViolation, NumericalError
from meanfield.model import AbsorbingDomain, ActionBox, InitialLaw, drift_full, validate

from .oracles import DESCRIPTORS


class ActionBoxTests(SimpleTestCase):

    def test_rest_action_is_projection_of_zero(self):
        box = ActionBox(lower=(1.0, -1.0), upper=(2.0, 1.0))
        np.testing.assert_array_equal(box.rest_action(), [1.0, 0.0])

    def test_lower_above_upper_is_rejected(self):
        with self.assertRaises(ContractViolation):
            ActionBox(lower=(1.0,), upper=(0.0,))

    def test_unbounded_box_is_rejected(self):
        with self.assertRaises(ContractViolation):
            ActionBox(lower=(-np.inf,), upper=(0.0,))

    def test_inactive_coordinates(self):
        box = CE7Config.coefficients().action_space
        self.assertEqual(box.active_mask.tolist(), [True, False, False])


class DomainTests(SimpleTestCase):

    def test_points_within_tolerance_of_boundary_are_outside(self):
        box = AbsorbingDomain("box", {"lower": [-1.0], "upper": [1.0]})
        inside = box.contains(np.array([[0.0], [1.0 - 1e-10], [1.0 - 1e-6], [1.5]]))
        self.assertEqual(inside.tolist(), [True, False, True, False])

    def test_ball_margins(self):
        ball = AbsorbingDomain("ball", {"center": [0.0, 0.0], "radius": 2.0})
        np.testing.assert_allclose(ball.margins([[0.0, 0.0], [2.0, 0.0], [3.0, 0.0]]), [2.0, 0.0, -1.0])

    def test_halfspace_intersection_needs_bounding_box(self):
        with self.assertRaises(ContractViolation):
            AbsorbingDomain("halfspace_intersection", {"normals": [[1.0]], "offsets": [1.0]})

    def test_capped_box_reaches_cap_at_time_one(self):
        domain = CE7Config.domain()
        self.assertTrue(domain.contains([[1.0, 1.0, 0.0]])[0])
        self.assertTrue(domain.contains([[1.9, 0.0, 1.0]])[0])
        self.assertFalse(domain.contains([[2.0, 0.0, 1.0]])[0])
        self.assertFalse(domain.contains([[0.0, 0.0, 2.2]])[0])

    def test_sample_interior_stays_inside(self):
        domain = CE7Config.domain()
        points = domain.sample_interior(np.random.default_rng(3), 500)
        self.assertEqual(points.shape, (500, 3))
        self.assertTrue(domain.contains(points).all())

    def test_unknown_kind(self):
        with self.assertRaises(ContractViolation):
            AbsorbingDomain("torus", {})


class InitialLawTests(SimpleTestCase):

    def test_product_of_atoms(self):
        points, weights = CE7Config.initial_law().atoms()
        self.assertEqual(points.shape, (8, 3))
        self.assertAlmostEqual(weights.sum(), 1.0)
        np.testing.assert_array_equal(np.unique(points[:, 2]), [0.0])

    def test_weighted_atoms_are_normalised(self):
        law = InitialLaw("product_of_atoms", {"atoms": [[0.0, 1.0]], "weights": [[1.0, 3.0]]})
        _, weights = law.atoms()
        np.testing.assert_allclose(weights, [0.25, 0.75])

    def test_support_fraction(self):
        domain = AbsorbingDomain("box", {"lower": [-1.0], "upper": [1.0]})
        law = InitialLaw("product_of_atoms", {"atoms": [[0.0, 1.0]]})
        self.assertAlmostEqual(law.support_fraction(domain), 0.5)


class DriftTests(SimpleTestCase):

    def setUp(self):
        self.coeffs = CE7Config.coefficients()

    def test_saturated_mean_drift(self):
        b = drift_full(self.coeffs, 0.5, [0.0, 1.0, 0.5], [0.1], [1.0, 0.0, 0.0])
        np.testing.assert_allclose(b, [0.9, 0.0, 1.0])
        b = drift_full(self.coeffs, 0.5, [0.0, 1.0, 0.5], [-3.0], [-1.0, 0.0, 0.0])
        np.testing.assert_allclose(b, [-1.25, 0.0, 1.0])

    def test_action_outside_box(self):
        with self.assertRaises(ContractViolation):
            drift_full(self.coeffs, 0.0, [0.0, 0.0, 0.0], [0.0], [0.0, 1.0, 0.0])

    def test_time_outside_horizon(self):
        with self.assertRaises(ContractViolation):
            drift_full(self.coeffs, 2.5, [0.0, 0.0, 0.0], [0.0], [0.0, 0.0, 0.0])

    def test_nan_input(self):
        with self.assertRaises(NumericalError):
            drift_full(self.coeffs, 0.0, [np.nan, 0.0, 0.0], [0.0], [0.0, 0.0, 0.0])


class ValidateTests(SimpleTestCase):

    def test_counterexample_passes_with_degenerate_note(self):
        report = validate(CE7Config.coefficients(), probes=300, rng_seed=1)
        self.assertTrue(report.passed, report.violations)
        self.assertTrue(any(note.startswith("degenerate sigma") for note in report.notes))
        self.assertEqual(report.entry("initial_law_support").observed, 1.0)

    def test_lipschitz_violation_is_reported_not_raised(self):
        coeffs = replace(load_descriptor(DESCRIPTORS / "coupled_1d.json"), lipschitz_Lbar=0.01)
        report = validate(coeffs, probes=200, rng_seed=0)
        self.assertFalse(report.passed)
        self.assertEqual([e.check for e in report.violations], ["lipschitz_bbar"])

    def test_bound_violation(self):
        coeffs = replace(load_descriptor(DESCRIPTORS / "coupled_1d.json"), bound_K=0.5)
        report = validate(coeffs, probes=200, rng_seed=0)
        self.assertFalse(report.entry("bound_f").passed)

    def test_needs_probes(self):
        with self.assertRaises(ContractViolation):
            validate(CE7Config.coefficients(), probes=0, rng_seed=0)

    def test_report_serialises(self):
        data = validate(CE7Config.coefficients(), probes=10, rng_seed=2).as_dict()
        self.assertEqual(data["probes"], 10)
        self.assertIn("entries", data)
