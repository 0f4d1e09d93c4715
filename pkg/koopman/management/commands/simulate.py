"""
Django command to run the controller in closed loop with the plant.
"""

from koopman.management.commands._stage import StageCommand
from koopman.services.experiments import closed_loop


class Command(StageCommand):
    help = "Simulate the closed loop under the Koopman predictive controller"
    stage_label = "simulate"

    def run_stage(self, cfg):
        return closed_loop(cfg)

    def describe(self, cfg, result):
        _, summary = result
        return (
            f"{summary['steps']} steps, {summary['infeasible_steps']} non-optimal QPs, "
            f"final |y| {summary['final_abs_output']:.3e}, log in {cfg.paths.kdpc_steps}"
        )
