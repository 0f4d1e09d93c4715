# Generated by Django 5.1.4 on 2026-10-18 09:12

import django.core.validators
import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                ("slug", models.SlugField(max_length=120, unique=True)),
                ("name", models.CharField(max_length=100)),
                (
                    "plant",
                    models.CharField(
                        choices=[
                            ("csd", "Cart-spring-damper"),
                            ("pendulum", "Pendulum"),
                            ("lti", "Linear oracle"),
                        ],
                        max_length=20,
                    ),
                ),
                ("seed", models.PositiveIntegerField(default=0)),
                ("config_hash", models.CharField(max_length=64)),
                (
                    "status",
                    models.CharField(
                        choices=[("passed", "Passed"), ("failed", "Failed")],
                        max_length=10,
                    ),
                ),
                ("out_dir", models.CharField(max_length=500)),
                ("diagnostics", models.JSONField(blank=True, default=dict)),
                ("manifest_hash", models.CharField(blank=True, max_length=64)),
            ],
            options={
                "ordering": ["name", "seed"],
                "unique_together": {("name", "seed")},
            },
        ),
        migrations.CreateModel(
            name="HorizonScore",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "horizon",
                    models.PositiveSmallIntegerField(
                        validators=[django.core.validators.MinValueValidator(1)]
                    ),
                ),
                (
                    "stage1_r2",
                    models.FloatField(
                        validators=[django.core.validators.MaxValueValidator(1.0)]
                    ),
                ),
                (
                    "stage2_r2",
                    models.FloatField(
                        validators=[django.core.validators.MaxValueValidator(1.0)]
                    ),
                ),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="scores",
                        to="koopman.experimentrun",
                    ),
                ),
            ],
            options={
                "ordering": ["run", "horizon"],
                "unique_together": {("run", "horizon")},
            },
        ),
        migrations.CreateModel(
            name="RunArtifact",
            fields=[
                (
                    "id",
                    models.BigAutoField(
                        auto_created=True,
                        primary_key=True,
                        serialize=False,
                        verbose_name="ID",
                    ),
                ),
                (
                    "kind",
                    models.CharField(
                        choices=[
                            ("data", "Identification data"),
                            ("model", "Model"),
                            ("closed_loop", "Closed loop"),
                            ("report", "Report"),
                        ],
                        max_length=20,
                    ),
                ),
                (
                    "path",
                    models.CharField(
                        help_text="Relative to the run directory", max_length=300
                    ),
                ),
                ("sha256", models.CharField(max_length=64)),
                (
                    "size",
                    models.PositiveBigIntegerField(default=0, help_text="Unit: bytes"),
                ),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="artifacts",
                        to="koopman.experimentrun",
                    ),
                ),
            ],
            options={
                "ordering": ["run", "path"],
                "unique_together": {("run", "path")},
            },
        ),
    ]
