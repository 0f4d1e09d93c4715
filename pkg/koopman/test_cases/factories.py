"""Test factories for creating run records."""

import factory
from koopman.models import ExperimentRun, HorizonScore, RunArtifact


class ExperimentRunFactory(factory.django.DjangoModelFactory):
    """Factory for creating test ExperimentRun instances."""

    class Meta:
        model = ExperimentRun

    name = "csd"
    plant = "csd"
    seed = factory.Sequence(lambda n: n)
    slug = factory.LazyAttribute(lambda obj: f"{obj.name}-seed-{obj.seed}")
    config_hash = factory.Faker("sha256")
    status = "passed"
    out_dir = factory.LazyAttribute(lambda obj: f"runs/{obj.name}/seed-{obj.seed}")
    diagnostics = factory.LazyFunction(lambda: {"diagnostics": {}, "checks": []})
    manifest_hash = factory.Faker("sha256")


class HorizonScoreFactory(factory.django.DjangoModelFactory):
    """Factory for creating test HorizonScore instances."""

    class Meta:
        model = HorizonScore

    run = factory.SubFactory(ExperimentRunFactory)
    horizon = factory.Sequence(lambda n: n + 1)
    stage1_r2 = 0.99
    stage2_r2 = 0.98


class RunArtifactFactory(factory.django.DjangoModelFactory):
    """Factory for creating test RunArtifact instances."""

    class Meta:
        model = RunArtifact

    run = factory.SubFactory(ExperimentRunFactory)
    kind = "data"
    path = factory.Sequence(lambda n: f"data/file-{n}.csv")
    sha256 = factory.Faker("sha256")
    size = 2048
