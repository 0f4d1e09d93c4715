"""
Django command to compute the terminal cost, gain and set.
"""

from koopman.management.commands._stage import StageCommand
from koopman.services.experiments import terminal


class Command(StageCommand):
    help = "Compute the terminal ingredients and their sampled certificate"
    stage_label = "terminal"

    def run_stage(self, cfg):
        return terminal(cfg)

    def describe(self, cfg, result):
        ingredients, certificate = result
        return (
            f"{ingredients.representation} terminal set with {ingredients.X_T.M.shape[0]} rows, "
            f"ρ(A+BK)={certificate['closed_loop_radius']:.4f}, saved to {cfg.paths.terminal}"
        )
