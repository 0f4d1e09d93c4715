import tempfile
from io import StringIO
from pathlib import Path

from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from koopman.models import ExperimentRun
from koopman.services.reporting import ReportArtifacts, emit_report
from koopman.utils.artifact_io import write_json
from koopman.utils.run_helpers import artifact_kind, create_or_update_run

CONFIG_DIR = Path(settings.BASE_DIR) / "configs"


def fake_report(root: Path, passed: bool = True):
    """A report over a run directory holding one data and one model file."""
    write_json(root / "data" / "dataset.json", {"columns": 10})
    write_json(root / "model" / "scores.json", {"horizons": [1]})
    artifacts = ReportArtifacts(
        r2_rows=[{"horizon": 1, "stage1_r2": 0.9, "stage2_r2": 0.95}],
        checks=[{"check": "max_final_output", "value": 0.0, "threshold": 0.01, "passed": passed}],
    )
    return emit_report(root / "report", artifacts, root=root)


class RunRecordTest(TestCase):
    """Test cases for storing runs in the database."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.data = {"name": "lti", "plant": "lti", "seed": 0, "config_hash": "0" * 64, "out_dir": str(self.root)}

    def tearDown(self):
        self.tmp.cleanup()

    def test_artifact_kind(self):
        self.assertEqual(artifact_kind("closed_loop/kdpc_steps.csv"), "closed_loop")
        self.assertEqual(artifact_kind("model/predictor.json"), "model")
        self.assertEqual(artifact_kind("config.json"), "report")

    def test_create_run(self):
        run = create_or_update_run(self.data, fake_report(self.root))
        self.assertEqual(run.slug, "lti-seed-0")
        self.assertTrue(run.passed)
        self.assertEqual(run.scores.count(), 1)
        kinds = dict(run.artifacts.values_list("path", "kind"))
        self.assertEqual(kinds, {
            "data/dataset.json": "data",
            "model/scores.json": "model",
            "report/diagnostics.json": "report",
            "report/r2.csv": "report",
        })
        self.assertEqual(len(run.manifest_hash), 64)

    def test_rerun_updates_the_same_record(self):
        create_or_update_run(self.data, fake_report(self.root))
        run = create_or_update_run(self.data, fake_report(self.root, passed=False))
        self.assertEqual(ExperimentRun.objects.count(), 1)
        self.assertEqual(run.status, "failed")
        self.assertEqual(run.scores.count(), 1)
        self.assertEqual(run.artifacts.count(), 4)


class CommandTest(TestCase):
    """Test cases for the management commands."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_missing_config_file(self):
        with self.assertRaisesMessage(CommandError, "Config file not found"):
            call_command("generate_data", config=str(self.out / "missing.yaml"))

    def test_invalid_config(self):
        path = self.out / "broken.yaml"
        path.write_text("name: broken\nseed: 0\nplant: {name: lti}\n", encoding="utf-8")
        with self.assertRaisesMessage(CommandError, "Invalid config"):
            call_command("generate_data", config=str(path))

    def test_stage_out_of_order(self):
        with self.assertRaisesMessage(CommandError, "Stage 'train' failed"):
            call_command("train", config=str(CONFIG_DIR / "lti.yaml"), out=str(self.out))

    def test_pipeline_records_the_run(self):
        stdout = StringIO()
        call_command("pipeline", config=str(CONFIG_DIR / "lti.yaml"), out=str(self.out), stdout=stdout)
        self.assertIn("PASS min_r2", stdout.getvalue())
        run = ExperimentRun.objects.get(name="lti", seed=0)
        self.assertTrue(run.passed)
        self.assertEqual(run.out_dir, str(self.out))
        self.assertEqual(run.scores.count(), 5)
        self.assertTrue(run.artifacts.filter(kind="closed_loop").exists())
