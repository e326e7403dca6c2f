import csv
import io
import json
import os
import tempfile
from fractions import Fraction
from pathlib import Path
from unittest import mock

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase, TestCase

from project import DEFAULT_SETTINGS, TEST_SETTINGS, settings_module

from .forms import RunConfigForm
from .models import ExperimentRun, RunArtifact

DESCRIPTORS = Path(settings.BASE_DIR) / "descriptors"


class RunCommandTests(TestCase):

    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def call(self, *args, out="run"):
        stdout, stderr = io.StringIO(), io.StringIO()
        call_command("run", *args, "--out", str(self.tmp / out), stdout=stdout, stderr=stderr)
        return stdout.getvalue(), stderr.getvalue()

    def read_csv(self, path):
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))

    def test_counterexample_gap(self):
        stdout, _ = self.call("counterexample", "--N-ladder", "2,3,5,7")
        self.assertIn("2 file(s)", stdout)
        rows = self.read_csv(self.tmp / "run" / "counterexample.csv")
        self.assertEqual([row["N"] for row in rows], ["2", "3", "5", "7"])
        for row in rows[1:]:
            self.assertGreaterEqual(Fraction(row["gap"]), Fraction(1, 12))
        self.assertEqual(rows[0]["cost_equilibrium"], "487/192")
        self.assertEqual(rows[0]["master_seed"], "0")
        document = json.loads((self.tmp / "run" / "counterexample.json").read_text())
        self.assertEqual(document["limit_cost"], "7/3")
        self.assertEqual(document["meta"]["config_hash"], rows[0]["config_hash"])

    def test_manifest_lists_checksums(self):
        self.call("counterexample", "--N-ladder", "3")
        manifest = json.loads((self.tmp / "run" / "manifest.json").read_text())
        self.assertEqual(manifest["verb"], "counterexample")
        self.assertEqual(sorted(manifest["files"]), ["counterexample.csv", "counterexample.json"])
        self.assertFalse(manifest["warning"])

    def test_rerun_reproduces_artifacts(self):
        self.call("counterexample", "--N-ladder", "3,4", out="first")
        self.call("counterexample", "--N-ladder", "3,4", out="second")
        first = json.loads((self.tmp / "first" / "manifest.json").read_text())["files"]
        second = json.loads((self.tmp / "second" / "manifest.json").read_text())["files"]
        self.assertEqual(first, second)

    def test_run_is_recorded(self):
        self.call("counterexample", "--N-ladder", "3", "--seed", "11")
        run = ExperimentRun.objects.get()
        self.assertEqual(run.status, ExperimentRun.Status.SUCCEEDED)
        self.assertEqual(run.exit_code, 0)
        self.assertEqual(int(run.master_seed), 11)
        self.assertEqual(RunArtifact.objects.filter(run=run).count(), 2)

    def test_validate_counterexample_model(self):
        self.call("validate-model", "--model", str(DESCRIPTORS / "counterexample.json"), "--probes", "200")
        report = json.loads((self.tmp / "run" / "validation.json").read_text())
        self.assertTrue(report["passed"])
        self.assertTrue(any(note.startswith("degenerate sigma") for note in report["notes"]))

    def test_decoupled_fixed_point(self):
        self.call(
            "solve-mfg",
            "--model", str(DESCRIPTORS / "decoupled_1d.json"),
            "--n-steps", "100",
            "--space-nodes", "41",
        )
        report = json.loads((self.tmp / "run" / "fixed_point.json").read_text())
        self.assertEqual(report["iterations"], 1)
        self.assertTrue(report["converged"])
        flow = self.read_csv(self.tmp / "run" / "flow.csv")
        self.assertEqual(len(flow), 101)
        self.assertEqual(float(flow[0]["survival"]), 1.0)

    def test_exact_nash_gap(self):
        self.call("nash-gap", "--model", str(DESCRIPTORS / "counterexample.json"), "--N-ladder", "3,5", "--exact")
        report = json.loads((self.tmp / "run" / "nash_gap.json").read_text())
        self.assertEqual(report["reference"], "exact")
        self.assertAlmostEqual(report["rows"][0]["gap"], 1 / 6)

    def test_bad_configuration_exits_with_two(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("solve-mfg", "--model", str(self.tmp / "missing.json"))
        self.assertEqual(ctx.exception.returncode, 2)
        with self.assertRaises(CommandError) as ctx:
            self.call("counterexample", "--N-ladder", "5,3")
        self.assertEqual(ctx.exception.returncode, 2)

    def test_module_error_exits_with_one(self):
        # d = 3 without the closed-form strategy has no best-response solver
        with self.assertRaises(SystemExit) as ctx:
            self.call("solve-mfg", "--model", str(DESCRIPTORS / "counterexample.json"), "--n-steps", "20")
        self.assertEqual(ctx.exception.code, 1)
        self.assertEqual(ExperimentRun.objects.get().status, ExperimentRun.Status.FAILED)

    def test_config_file_defaults(self):
        config = self.tmp / "config.json"
        config.write_text(json.dumps({"ladder": [3, 5], "seed": 4}))
        self.call("counterexample", "--config", str(config), "--seed", "9")
        rows = self.read_csv(self.tmp / "run" / "counterexample.csv")
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[0]["master_seed"], "9")


class RunConfigFormTests(TestCase):

    def test_even_enumeration_limit(self):
        form = RunConfigForm(data={"verb": "counterexample", "ladder": "3,12"})
        self.assertFalse(form.is_valid())
        self.assertIn("ladder", form.errors)
        self.assertTrue(RunConfigForm(data={"verb": "counterexample", "ladder": "3,10"}).is_valid())

    def test_exact_gap_needs_odd_ladder(self):
        form = RunConfigForm(data={
            "verb": "nash-gap",
            "model": str(DESCRIPTORS / "counterexample.json"),
            "ladder": "3,4",
            "exact": True,
        })
        self.assertFalse(form.is_valid())

    def test_model_is_required(self):
        form = RunConfigForm(data={"verb": "solve-pde"})
        self.assertFalse(form.is_valid())
        self.assertIn("model", form.errors)

    def test_damping_range(self):
        form = RunConfigForm(data={"verb": "counterexample", "ladder": "3", "damping": "1.5"})
        self.assertFalse(form.is_valid())

    def test_defaults_are_filled(self):
        form = RunConfigForm(data={"verb": "counterexample", "ladder": "3"})
        self.assertTrue(form.is_valid())
        config = form.run_config()
        self.assertEqual(config["seed"], 0)
        self.assertEqual(config["replications"], 30)
        self.assertEqual(config["ladder"], [3])


class SettingsModuleTests(SimpleTestCase):

    def test_test_runs_use_ci_settings(self):
        with mock.patch.dict(os.environ, {}, clear=False):
            os.environ.pop("MFG_SETTINGS", None)
            self.assertEqual(settings_module(["manage.py", "test"]), TEST_SETTINGS)
            self.assertEqual(settings_module(["manage.py", "run", "counterexample"]), DEFAULT_SETTINGS)
            self.assertEqual(settings_module(["manage.py"]), DEFAULT_SETTINGS)

    def test_environment_override(self):
        with mock.patch.dict(os.environ, {"MFG_SETTINGS": "project.settings.ci"}):
            self.assertEqual(settings_module(["manage.py", "run"]), "project.settings.ci")
