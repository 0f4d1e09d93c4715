"""
Django command to fit the least-squares multi-step predictor in the lifted space.
"""

from koopman.management.commands._stage import StageCommand
from koopman.services.experiments import fit


class Command(StageCommand):
    help = "Fit the multi-step predictor and score it on the test split"
    stage_label = "fit-predictor"

    def run_stage(self, cfg):
        return fit(cfg)

    def describe(self, cfg, result):
        _, scores = result
        return f"Test R² {min(scores['stage2_r2']):.4f}..{max(scores['stage2_r2']):.4f}, saved to {cfg.paths.predictor}"
