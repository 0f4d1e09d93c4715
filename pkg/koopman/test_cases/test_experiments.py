import os
import tempfile
from pathlib import Path
from unittest import skipUnless

import numpy as np
import yaml
from django.conf import settings
from django.test import SimpleTestCase
from rest_framework import serializers

from koopman.exceptions import StageError
from koopman.services.datapipe import build_hankels, check_excitation, lifted_sequence, split_trajectory
from koopman.services.experiments import (
    AcceptanceSection,
    acceptance_checks,
    fit,
    generate_data,
    run_pipeline,
    summarize_closed_loop,
)
from koopman.services.kdpc import ClosedLoopRun
from koopman.services.numerics import numerical_rank
from koopman.services.observables import init_map, input_scale_for, lift
from koopman.services.plants import Trajectory, make_plant, multisine, simulate
from koopman.services.reporting import ReportArtifacts, emit_report, empty_closed_loop_summary
from koopman.utils.artifact_io import read_json
from koopman.utils.config_loader import config_hash, load_config, parse_config

CONFIG_DIR = Path(settings.BASE_DIR) / "configs"


def config_data(name: str = "lti"):
    return yaml.safe_load((CONFIG_DIR / f"{name}.yaml").read_text(encoding="utf-8"))


class ConfigTest(SimpleTestCase):
    """Test cases for experiment config validation."""

    def test_shipped_configs_are_valid(self):
        for name in ("csd", "pendulum", "lti"):
            with self.subTest(config=name):
                cfg = load_config(CONFIG_DIR / f"{name}.yaml", out="unused")
                self.assertEqual(cfg.name, name)
                self.assertEqual(cfg.plant.name, name)

    def test_overrides(self):
        cfg = parse_config(config_data(), seed=7, out="somewhere")
        self.assertEqual(cfg.seed, 7)
        self.assertEqual(cfg.multisine.seed, 7)
        self.assertEqual(cfg.out_dir, Path("somewhere"))

    def test_default_out_dir_uses_artifact_root(self):
        cfg = parse_config(config_data(), seed=3)
        self.assertEqual(cfg.out_dir, Path(settings.KOOPMAN["ARTIFACT_ROOT"]) / "lti" / "seed-3")

    def test_config_hash_ignores_out_dir(self):
        data = config_data()
        self.assertEqual(config_hash(parse_config(data, out="a")), config_hash(parse_config(data, out="b")))
        self.assertNotEqual(config_hash(parse_config(data, seed=0, out="a")), config_hash(parse_config(data, seed=1, out="a")))

    def test_invalid_fields_are_reported(self):
        cases = {
            "simulation": ("simulation", {"x0": [1.0, 0.0], "steps": 10}),
            "controller": ("controller", {"R": [[1.0, 0.0], [0.0, 1.0]], "u_bounds": [-1.0, 1.0]}),
            "bounds": ("controller", {"u_bounds": [1.0, -1.0]}),
            "train_fraction": ("training", {"T_ini": 1, "N": 5, "train_fraction": 1.0}),
        }
        for label, (section, values) in cases.items():
            data = config_data()
            data[section] = values
            with self.subTest(case=label):
                with self.assertRaises(serializers.ValidationError) as ctx:
                    parse_config(data, out="unused")
                self.assertIn(section, ctx.exception.detail)

    def test_unknown_plant_is_rejected(self):
        data = config_data()
        data["plant"] = {"name": "boiler"}
        with self.assertRaises(serializers.ValidationError):
            parse_config(data, out="unused")


class BenchmarkExcitationTest(SimpleTestCase):
    """Test cases for the benchmark identification data; no network is trained."""

    def training_hankels(self, name: str):
        cfg = load_config(CONFIG_DIR / f"{name}.yaml", out="unused")
        plant = make_plant(cfg.plant.name, cfg.plant.params)
        traj = simulate(plant, np.zeros(plant.n), multisine(cfg.multisine))
        train_traj, _, _ = split_trajectory(traj, cfg.training.train_fraction)
        hankels = build_hankels(train_traj, cfg.training.T_ini, cfg.training.N)
        obs_map = init_map(
            T_ini=cfg.training.T_ini,
            m=plant.m,
            p=plant.p,
            hidden=cfg.training.hidden,
            seed=cfg.seed,
            input_scale=input_scale_for(hankels.X_ini),
        )
        lifted = lifted_sequence(lambda X: lift(obs_map, X), train_traj, cfg.training.T_ini)
        return hankels.with_lifted(lifted), obs_map

    def test_future_inputs_are_exciting(self):
        for name in ("csd", "pendulum"):
            hankels, _ = self.training_hankels(name)
            with self.subTest(config=name):
                report = numerical_rank(hankels.U_f)
                self.assertEqual(report.rows, 15)
                self.assertTrue(report.full_row_rank)

    def test_cart_spring_damper_regressor_has_full_rank(self):
        hankels, obs_map = self.training_hankels("csd")
        report = check_excitation(hankels.Z_p, hankels.U_f)
        self.assertEqual(report.rows, obs_map.L + 15)
        self.assertTrue(report.full_row_rank)


class ReportTest(SimpleTestCase):
    """Test cases for acceptance checks and report emission."""

    def test_empty_diagnostics_get_zero_counters(self):
        with tempfile.TemporaryDirectory() as tmp:
            report = emit_report(tmp, ReportArtifacts())
            self.assertEqual(report.diagnostics["kdpc"], empty_closed_loop_summary())
            self.assertTrue(report.passed)
            paths = [entry["path"] for entry in report.manifest["files"]]
            self.assertEqual(paths, ["diagnostics.json", "r2.csv"])
            self.assertEqual(read_json(report.manifest_path), report.manifest)

    def test_acceptance_checks(self):
        diagnostics = {"kdpc": {**empty_closed_loop_summary(), "final_abs_output": 0.5}}
        checks = acceptance_checks(AcceptanceSection(max_final_output=0.1, require_saturation=True), diagnostics)
        self.assertEqual([check["check"] for check in checks], ["max_final_output", "require_saturation"])
        self.assertFalse(any(check["passed"] for check in checks))

        checks = acceptance_checks(AcceptanceSection(max_infeasible_steps=0), diagnostics)
        self.assertEqual(checks, [{"check": "max_infeasible_steps", "value": 0, "threshold": 0, "passed": True}])

    def test_missing_cost_ratio_fails_its_check(self):
        diagnostics = {"kdpc": empty_closed_loop_summary(), "cost_ratio": None}
        checks = acceptance_checks(AcceptanceSection(max_cost_ratio=1.5), diagnostics)
        self.assertFalse(checks[0]["passed"])

    def test_summary_of_run_without_steps(self):
        run = ClosedLoopRun(Trajectory(np.zeros((1, 1)), np.zeros((2, 1))), [], 1)
        self.assertEqual(summarize_closed_loop(run, np.eye(1), np.eye(1), (-1.0, 1.0)), empty_closed_loop_summary())


class StageErrorTest(SimpleTestCase):
    """Test cases for stage failures."""

    def test_stage_without_inputs_names_its_artifacts(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = parse_config(config_data(), out=tmp)
            with self.assertRaises(StageError) as ctx:
                fit(cfg)
            self.assertEqual(ctx.exception.stage, "fit")
            self.assertIn(str(cfg.paths.predictor), ctx.exception.paths)

    def test_generate_writes_identification_data(self):
        with tempfile.TemporaryDirectory() as tmp:
            cfg = parse_config(config_data(), out=tmp)
            traj = generate_data(cfg)
            self.assertEqual(traj.num_steps, 200)
            self.assertTrue(cfg.paths.identification.exists())
            self.assertNotIn("out_dir", read_json(cfg.paths.config))
            self.assertEqual(read_json(cfg.paths.dataset)["seed"], 0)


class LinearPipelineTest(SimpleTestCase):
    """Test cases for the full pipeline on the scalar linear plant."""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        cls.cfg = parse_config(config_data(), out=Path(cls.tmp.name) / "first")
        cls.report = run_pipeline(cls.cfg)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_acceptance_checks_pass(self):
        self.assertEqual(self.report.failed_checks, [])
        self.assertTrue(self.report.passed)
        self.assertEqual(len(self.report.checks), 6)

    def test_predictor_is_exact(self):
        scores = read_json(self.cfg.paths.scores)
        self.assertEqual(scores["horizons"], [1, 2, 3, 4, 5])
        self.assertGreater(min(scores["stage2_r2"]), 1 - 1e-9)
        self.assertLess(scores["consistency"]["psi_mismatch"], 1e-8)

    def test_closed_loop_artifacts(self):
        summary = read_json(self.cfg.paths.kdpc_summary)
        self.assertEqual(summary["steps"], 30)
        self.assertEqual(summary["infeasible_steps"], 0)
        self.assertLessEqual(summary["max_abs_input"], 1.0)
        nmpc_summary = read_json(self.cfg.paths.nmpc_summary)
        self.assertEqual(nmpc_summary["steps"], 31)
        self.assertIsNotNone(self.report.diagnostics["cost_ratio"])

    def test_manifest_covers_every_stage(self):
        paths = {entry["path"] for entry in self.report.manifest["files"]}
        for expected in (
            "config.json",
            "data/identification.csv",
            "model/observables.json",
            "model/predictor.json",
            "model/terminal.json",
            "closed_loop/kdpc_steps.csv",
            "closed_loop/nmpc_costs.csv",
            "report/r2.csv",
            "report/trajectories/kdpc.csv",
        ):
            self.assertIn(expected, paths)
        self.assertNotIn("report/manifest.json", paths)

    def test_rerun_is_byte_identical(self):
        """Test that the same config and seed in another directory reproduce every artifact."""
        cfg = parse_config(config_data(), out=Path(self.tmp.name) / "second")
        second = run_pipeline(cfg)
        self.assertEqual(second.manifest, self.report.manifest)


BENCHMARKS_ENABLED = os.environ.get("KOOPMAN_BENCHMARK_TESTS") == "1"


@skipUnless(BENCHMARKS_ENABLED, "set KOOPMAN_BENCHMARK_TESTS=1 to run the nonlinear benchmarks")
class BenchmarkPipelineTest(SimpleTestCase):
    """Full nonlinear benchmarks; each trains a network and takes minutes."""

    def run_benchmark(self, name: str):
        with tempfile.TemporaryDirectory() as tmp:
            report = run_pipeline(load_config(CONFIG_DIR / f"{name}.yaml", out=tmp))
            self.assertEqual(report.failed_checks, [])
            return report

    def assert_recursively_feasible(self, kdpc):
        self.assertEqual(kdpc["steps"], 200)
        self.assertEqual(kdpc["infeasible_steps"], 0)
        self.assertEqual(kdpc["fallback_steps"], 0)
        self.assertEqual(kdpc["candidate_failures"], 0)

    def test_cart_spring_damper(self):
        report = self.run_benchmark("csd")
        self.assert_recursively_feasible(report.diagnostics["kdpc"])
        self.assertLessEqual(report.diagnostics["kdpc"]["max_error_norm"], 0.1)
        self.assertLessEqual(report.diagnostics["cost_ratio"], 1.25)

    def test_pendulum(self):
        report = self.run_benchmark("pendulum")
        self.assert_recursively_feasible(report.diagnostics["kdpc"])
        self.assertGreaterEqual(report.diagnostics["kdpc"]["saturated_steps"], 1)
