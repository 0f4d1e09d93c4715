"""
Data models for the koopman app.

Numerical artifacts live on disk; the database keeps one record per
experiment run with its diagnostics, the per-horizon R² scores and the
hashed artifact list so runs can be browsed through the API and admin.
"""

from django.core.validators import MaxValueValidator, MinValueValidator
from django.db import models
from django.utils.text import slugify


class ExperimentRun(models.Model):
    """
    One pipeline execution of an experiment config.

    Attributes:
        slug (SlugField): URL identifier, derived from the config name and seed.
        name (CharField): Config name.
        plant (CharField): Benchmark plant.
        seed (PositiveIntegerField): Random seed of the run.
        config_hash (CharField): SHA-256 of the canonical config.
        status (CharField): Whether all acceptance checks passed.
        out_dir (CharField): Run directory on disk.
        diagnostics (JSONField): Report diagnostics and acceptance checks.
        manifest_hash (CharField): SHA-256 of the manifest file.
    """

    PLANTS = (
        ("csd", "Cart-spring-damper"),
        ("pendulum", "Pendulum"),
        ("lti", "Linear oracle"),
    )
    STATUSES = (
        ("passed", "Passed"),
        ("failed", "Failed"),
    )

    slug = models.SlugField(max_length=120, unique=True)
    name = models.CharField(max_length=100)
    plant = models.CharField(max_length=20, choices=PLANTS)
    seed = models.PositiveIntegerField(default=0)
    config_hash = models.CharField(max_length=64)
    status = models.CharField(max_length=10, choices=STATUSES)
    out_dir = models.CharField(max_length=500)
    diagnostics = models.JSONField(default=dict, blank=True)
    manifest_hash = models.CharField(max_length=64, blank=True)

    def save(self, *args, **kwargs):
        if not self.slug:
            self.slug = slugify(f"{self.name}-seed-{self.seed}")
        super().save(*args, **kwargs)

    @property
    def passed(self) -> bool:
        return self.status == "passed"

    def __str__(self):
        return f"{self.name} (seed {self.seed}, {self.status})"

    class Meta:
        ordering = ["name", "seed"]
        unique_together = ["name", "seed"]


class HorizonScore(models.Model):
    """Test-set R² at one prediction horizon, for the trained heads and the least-squares predictor."""

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="scores")
    horizon = models.PositiveSmallIntegerField(validators=[MinValueValidator(1)])
    stage1_r2 = models.FloatField(validators=[MaxValueValidator(1.0)])
    stage2_r2 = models.FloatField(validators=[MaxValueValidator(1.0)])

    def __str__(self):
        return f"{self.run.slug} j={self.horizon}: {self.stage2_r2:.4f}"

    class Meta:
        ordering = ["run", "horizon"]
        unique_together = ["run", "horizon"]


class RunArtifact(models.Model):
    """A file written by the run, as listed in its manifest."""

    KINDS = (
        ("data", "Identification data"),
        ("model", "Model"),
        ("closed_loop", "Closed loop"),
        ("report", "Report"),
    )

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="artifacts")
    kind = models.CharField(max_length=20, choices=KINDS)
    path = models.CharField(max_length=300, help_text="Relative to the run directory")
    sha256 = models.CharField(max_length=64)
    size = models.PositiveBigIntegerField(default=0, help_text="Unit: bytes")

    def __str__(self):
        return self.path

    class Meta:
        ordering = ["run", "path"]
        unique_together = ["run", "path"]
