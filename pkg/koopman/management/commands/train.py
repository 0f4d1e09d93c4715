"""
Django command to learn the observables and the multi-step output heads.
"""

from koopman.management.commands._stage import StageCommand
from koopman.services.experiments import train


class Command(StageCommand):
    help = "Train the lifting network on the identification data"
    stage_label = "train"

    def run_stage(self, cfg):
        return train(cfg)

    def describe(self, cfg, result):
        obs_map, heads = result
        return f"Trained L={obs_map.L} lifting, loss {heads.final_loss:.3e}, saved to {cfg.paths.model}"
