from django.test import SimpleTestCase
from rest_framework.test import APITestCase

from koopman.models import ExperimentRun, HorizonScore, RunArtifact
from koopman.utils.formatters import format_bytes, format_score_range
from .factories import ExperimentRunFactory, HorizonScoreFactory, RunArtifactFactory


class RunAPITest(APITestCase):
    """Test cases for the run API endpoints."""

    def setUp(self):
        """Set up test data."""
        self.csd_run = ExperimentRunFactory(name="csd", plant="csd", seed=0)
        self.pendulum_run = ExperimentRunFactory(name="pendulum", plant="pendulum", seed=0, status="failed")
        HorizonScoreFactory(run=self.csd_run, horizon=1, stage2_r2=0.9958)
        HorizonScoreFactory(run=self.csd_run, horizon=2, stage2_r2=0.98444)

        self.url = "/api/runs/"

    def tearDown(self):
        """Clean up test data."""
        RunArtifact.objects.all().delete()
        HorizonScore.objects.all().delete()
        ExperimentRun.objects.all().delete()

        # Reset factory sequences
        ExperimentRunFactory.reset_sequence(0)
        HorizonScoreFactory.reset_sequence(0)
        RunArtifactFactory.reset_sequence(0)

    def test_get_run_list_success(self):
        """Test successful retrieval of run list."""
        response = self.client.get(self.url, format="json")
        self.assertEqual(response.status_code, 200)

        data = response.json()
        self.assertIn("results", data)  # DRF pagination
        results = data["results"]
        self.assertEqual(len(results), 2)

        first_run = results[0]
        for key in ("url", "slug", "name", "plant", "seed", "status", "r2"):
            self.assertIn(key, first_run)
        self.assertEqual(first_run["slug"], "csd-seed-0")
        self.assertEqual(first_run["r2"], "0.9844-0.9958")
        self.assertIsNone(results[1]["r2"])

    def test_get_run_list_filter(self):
        """Test filtering the run list by plant and status."""
        response = self.client.get(f"{self.url}?plant=pendulum", format="json")
        self.assertEqual(response.status_code, 200)
        results = response.json()["results"]
        self.assertEqual([run["name"] for run in results], ["pendulum"])

        response = self.client.get(f"{self.url}?status=passed", format="json")
        self.assertEqual([run["name"] for run in response.json()["results"]], ["csd"])

    def test_get_run_list_search(self):
        """Test run list search functionality."""
        response = self.client.get(f"{self.url}?search=pend", format="json")
        self.assertEqual(response.status_code, 200)
        results = response.json()["results"]
        self.assertEqual(len(results), 1)
        self.assertEqual(results[0]["plant"], "pendulum")

    def test_get_run_list_empty(self):
        """Test run list when no runs exist."""
        ExperimentRun.objects.all().delete()
        response = self.client.get(self.url, format="json")
        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()["results"], [])

    def test_get_run_detail_success(self):
        """Test successful retrieval of a run with its scores."""
        RunArtifactFactory(run=self.csd_run)
        response = self.client.get(f"{self.url}{self.csd_run.slug}/", format="json")
        self.assertEqual(response.status_code, 200)

        data = response.json()
        self.assertEqual(data["name"], "csd")
        self.assertEqual(data["status"], "passed")
        self.assertEqual(data["artifact_count"], 1)
        self.assertEqual([score["horizon"] for score in data["scores"]], [1, 2])
        self.assertIn("checks", data["diagnostics"])

    def test_get_run_detail_not_found(self):
        """Test retrieval of non-existent run."""
        response = self.client.get(f"{self.url}boiler-seed-0/", format="json")
        self.assertEqual(response.status_code, 404)

    def test_runs_are_read_only(self):
        response = self.client.post(self.url, {"name": "new"}, format="json")
        self.assertEqual(response.status_code, 405)


class RunArtifactAPITest(APITestCase):
    """Test cases for the nested artifact endpoints."""

    def setUp(self):
        """Set up test data."""
        self.run = ExperimentRunFactory(name="lti", plant="lti", seed=0)
        self.other_run = ExperimentRunFactory(name="lti", plant="lti", seed=1)
        RunArtifactFactory(run=self.run, kind="model", path="model/predictor.json", size=3500)
        RunArtifactFactory(run=self.run, kind="data", path="data/identification.csv")
        RunArtifactFactory(run=self.other_run, kind="data", path="data/identification.csv")

        self.url = f"/api/runs/{self.run.slug}/artifacts/"

    def tearDown(self):
        """Clean up test data."""
        RunArtifact.objects.all().delete()
        ExperimentRun.objects.all().delete()

        ExperimentRunFactory.reset_sequence(0)
        RunArtifactFactory.reset_sequence(0)

    def test_get_artifact_list_success(self):
        """Test that only the artifacts of the run are listed, ordered by path."""
        response = self.client.get(self.url, format="json")
        self.assertEqual(response.status_code, 200)
        results = response.json()["results"]
        self.assertEqual([artifact["path"] for artifact in results], ["data/identification.csv", "model/predictor.json"])
        self.assertEqual(results[1]["size_display"], "3.4 KiB")

    def test_get_artifact_list_filter_by_kind(self):
        response = self.client.get(f"{self.url}?kind=model", format="json")
        self.assertEqual(response.status_code, 200)
        results = response.json()["results"]
        self.assertEqual(len(results), 1)
        self.assertEqual(results[0]["kind"], "model")

    def test_get_artifact_list_unknown_run(self):
        """Test that an unknown run slug gives 404."""
        response = self.client.get("/api/runs/boiler-seed-0/artifacts/", format="json")
        self.assertEqual(response.status_code, 404)


class FormatterTest(SimpleTestCase):
    """Test cases for display formatting."""

    def test_format_score_range(self):
        self.assertEqual(format_score_range([0.98444, 0.9958]), "0.9844-0.9958")
        self.assertEqual(format_score_range([0.5, None, 0.50001]), "0.5000")
        self.assertIsNone(format_score_range([]))

    def test_format_bytes(self):
        self.assertEqual(format_bytes(512), "512 B")
        self.assertEqual(format_bytes(3500), "3.4 KiB")
        self.assertEqual(format_bytes(5 * 1024**3), "5120.0 MiB")
        self.assertIsNone(format_bytes(None))
