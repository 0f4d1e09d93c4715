"""
Django command to run the exact-model NMPC baseline.
"""

from koopman.management.commands._stage import StageCommand
from koopman.services.experiments import nmpc


class Command(StageCommand):
    help = "Simulate the nonlinear MPC baseline on the exact plant model"
    stage_label = "nmpc"

    def run_stage(self, cfg):
        return nmpc(cfg)

    def describe(self, cfg, result):
        _, summary = result
        return f"NMPC cost {summary['cumulative_stage_cost']:.4f}, {summary['warnings']} solver warnings"
