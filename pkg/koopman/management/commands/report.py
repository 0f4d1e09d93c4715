"""
Django command to emit the run report from persisted stage artifacts.
"""

from koopman.management.commands._stage import ReportingCommand
from koopman.services.experiments import report


class Command(ReportingCommand):
    help = "Write the R² table, diagnostics and manifest, then check acceptance"
    stage_label = "report"

    def run_stage(self, cfg):
        return report(cfg)
