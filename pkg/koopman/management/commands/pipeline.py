"""
Django command to run every pipeline stage in order.
"""

from koopman.management.commands._stage import ReportingCommand
from koopman.services.experiments import run_pipeline


class Command(ReportingCommand):
    help = "Run generate, train, fit, terminal, closed loop, NMPC and report"
    stage_label = "pipeline"

    def run_stage(self, cfg):
        return run_pipeline(cfg)
