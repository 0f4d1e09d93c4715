"""
Django command to run the open-loop identification experiment.
"""

from koopman.management.commands._stage import StageCommand
from koopman.services.experiments import generate_data


class Command(StageCommand):
    help = "Simulate the plant under a multisine input and store the identification data"
    stage_label = "generate-data"

    def run_stage(self, cfg):
        return generate_data(cfg)

    def describe(self, cfg, result):
        return f"Recorded {result.num_steps} samples to {cfg.paths.identification}"
