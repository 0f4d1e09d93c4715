"""
Shared base for the pipeline stage commands.
"""

from typing import Any

from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from koopman.exceptions import KoopmanError
from koopman.services.experiments import ExperimentConfig
from koopman.services.reporting import RunReport
from koopman.utils.config_loader import config_hash, load_config
from koopman.utils.run_helpers import create_or_update_run


class StageCommand(BaseCommand):
    """Loads the config, runs one stage and turns failures into ``CommandError``."""

    stage_label = ""

    def add_arguments(self, parser):
        parser.add_argument("--config", required=True, help="Path to the experiment YAML config")
        parser.add_argument("--seed", type=int, help="Override the config seed")
        parser.add_argument("--out", help="Override the run directory")

    def run_stage(self, cfg: ExperimentConfig) -> Any:
        raise NotImplementedError

    def describe(self, cfg: ExperimentConfig, result: Any) -> str:
        return f"{self.stage_label} finished, artifacts in {cfg.out_dir}"

    def load_config(self, options) -> ExperimentConfig:
        try:
            return load_config(options["config"], seed=options.get("seed"), out=options.get("out"))
        except serializers.ValidationError as e:
            raise CommandError(f"Invalid config {options['config']}: {e.detail}") from e
        except KoopmanError as e:
            raise CommandError(str(e)) from e

    def handle(self, *args, **options) -> None:
        cfg = self.load_config(options)
        try:
            result = self.run_stage(cfg)
        except KoopmanError as e:
            raise CommandError(str(e)) from e
        self.stdout.write(self.style.SUCCESS(self.describe(cfg, result)))


class ReportingCommand(StageCommand):
    """A stage that ends in a report: records the run and fails on failed checks."""

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--no-record", action="store_true", help="Do not store the run in the database")

    def handle(self, *args, **options) -> None:
        cfg = self.load_config(options)
        try:
            report: RunReport = self.run_stage(cfg)
        except KoopmanError as e:
            raise CommandError(str(e)) from e

        if not options.get("no_record"):
            create_or_update_run(
                {
                    "name": cfg.name,
                    "plant": cfg.plant.name,
                    "seed": cfg.seed,
                    "config_hash": config_hash(cfg),
                    "out_dir": str(cfg.out_dir),
                },
                report,
            )
        for check in report.checks:
            line = f"{check['check']}: {check['value']} (threshold {check['threshold']})"
            self.stdout.write(self.style.SUCCESS(f"PASS {line}") if check["passed"] else self.style.ERROR(f"FAIL {line}"))
        if not report.passed:
            failed = ", ".join(check["check"] for check in report.failed_checks)
            raise CommandError(f"Acceptance checks failed: {failed} (report in {report.out_dir})")
        self.stdout.write(self.style.SUCCESS(f"Report written to {report.out_dir}"))
