import csv
import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.exceptions import ValidationError
from django.test import SimpleTestCase

from meanfield.counterexample import CE7Config
from meanfield.descriptors import describe, dump_descriptor, load_descriptor, parse_descriptor
from meanfield.exceptions import ContractViolation
from meanfield.fieldio import density_field_rows, encode_binary, read_binary, value_field_rows, write_binary, write_csv
from meanfield.flows import MeasureFlow
from meanfield.hjb_kfp import SpaceGrid, initial_density, solve_hjb, solve_kfp
from meanfield.sde import TimeGrid

from .oracles import DESCRIPTORS


class DescriptorTests(SimpleTestCase):

    def setUp(self):
        self.data = json.loads((DESCRIPTORS / "coupled_1d.json").read_text())

    def test_description_is_stable(self):
        coeffs = parse_descriptor(self.data)
        again = parse_descriptor(describe(coeffs))
        self.assertEqual(describe(again), describe(coeffs))
        self.assertEqual(again.drift_bbar, coeffs.drift_bbar)
        self.assertEqual(again.action_space, coeffs.action_space)
        np.testing.assert_array_equal(again.sigma, coeffs.sigma)

    def test_decimal_strings_are_parsed_exactly(self):
        coeffs = parse_descriptor(self.data)
        self.assertEqual(coeffs.lipschitz_Lbar, 0.2)
        self.assertEqual(coeffs.name, "coupled_1d")

    def test_missing_field(self):
        del self.data["bound_K"]
        with self.assertRaises(ValidationError) as ctx:
            parse_descriptor(self.data)
        self.assertIn("bound_K", ctx.exception.message_dict)

    def test_bad_decimal(self):
        self.data["sigma"] = [["one"]]
        with self.assertRaises(ValidationError):
            parse_descriptor(self.data)

    def test_unknown_family(self):
        self.data["f"] = {"family": "cubic", "params": {}}
        with self.assertRaises(ValidationError):
            parse_descriptor(self.data)

    def test_dump_and_load(self):
        coeffs = CE7Config.coefficients()
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "ce.json"
            dump_descriptor(coeffs, path)
            loaded = load_descriptor(path)
        self.assertEqual(loaded.domain.kind, "capped_box")
        self.assertEqual(loaded.initial_law.atoms()[1].size, 4)
        self.assertTrue(loaded.sigma_is_degenerate)

    def test_missing_file(self):
        with self.assertRaises(ValidationError):
            load_descriptor(DESCRIPTORS / "nowhere.json")


class FieldFileTests(SimpleTestCase):

    def test_binary_layout(self):
        array = np.arange(6.0).reshape(2, 3)
        raw = encode_binary(array)
        self.assertEqual(raw[:8], b"MFGFIELD")
        self.assertEqual(len(raw), 8 + 3 * 8 + 6 * 8)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "field.bin"
            write_binary(path, array)
            np.testing.assert_array_equal(read_binary(path), array)
            path.write_bytes(b"NOTFIELD" + raw[8:])
            with self.assertRaises(ContractViolation):
                read_binary(path)

    def test_csv_rows(self):
        coeffs = load_descriptor(DESCRIPTORS / "exit_time_1d.json")
        grid = TimeGrid(20, 1.0)
        space = SpaceGrid.for_domain(coeffs.domain, 11)
        value = solve_hjb(coeffs, grid, space, MeasureFlow.constant(grid, [0.0]))
        density = solve_kfp(coeffs, grid, space, value, initial_density(coeffs.initial_law, space))
        header, rows = value_field_rows(value)
        self.assertEqual(header, ["t", "x1", "value", "grad1", "control1"])
        self.assertEqual(len(rows), 21 * 11)
        header, rows = density_field_rows(density)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "density.csv"
            write_csv(path, header, rows)
            with open(path, newline="") as fh:
                lines = list(csv.reader(fh))
        self.assertEqual(lines[0], ["t", "x1", "density"])
        self.assertEqual(len(lines), 1 + 21 * 11)
        self.assertEqual(float(lines[1][1]), -1.0)
