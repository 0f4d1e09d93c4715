"""Helper functions for recording experiment runs in the database."""

from typing import Any, Dict, Optional

from django.db import transaction

from koopman.models import ExperimentRun, HorizonScore, RunArtifact
from koopman.services.reporting import RunReport
from koopman.utils.artifact_io import sha256_file


def artifact_kind(relative_path: str) -> str:
    """Artifact kind from the top-level directory of its path.

    Args:
        relative_path: Path relative to the run directory, "/"-separated

    Returns:
        One of the ``RunArtifact.KINDS`` codes; "report" for anything unknown
    """
    top = relative_path.split("/", 1)[0]
    known = {code for code, _ in RunArtifact.KINDS}
    return top if top in known else "report"


@transaction.atomic
def create_or_update_run(
    data: Dict[str, Any],
    report: RunReport,
    instance: Optional[ExperimentRun] = None,
) -> ExperimentRun:
    """Create or update a run with its scores and artifacts.

    Args:
        data: Run fields: name, plant, seed, config_hash, out_dir
        report: Report returned by the pipeline
        instance: Existing run if updating; looked up by name and seed otherwise

    Returns:
        Created or updated ExperimentRun
    """
    fields = {
        **data,
        "status": "passed" if report.passed else "failed",
        "diagnostics": {"diagnostics": report.diagnostics, "checks": report.checks},
        "manifest_hash": sha256_file(report.manifest_path),
    }
    try:
        run = _create_or_update_run_instance(fields, instance)
        _replace_scores(run, report)
        _replace_artifacts(run, report)
        return run
    except Exception as e:
        raise Exception(f'Failed to {"update" if instance else "record"} run "{data.get("name")}": {e}') from e


def _create_or_update_run_instance(fields: Dict[str, Any], instance: Optional[ExperimentRun]) -> ExperimentRun:
    if instance is None:
        instance = ExperimentRun.objects.filter(name=fields["name"], seed=fields["seed"]).first()
    if instance:
        for attr, value in fields.items():
            setattr(instance, attr, value)
        instance.save()
        return instance
    return ExperimentRun.objects.create(**fields)


def _replace_scores(run: ExperimentRun, report: RunReport) -> None:
    run.scores.all().delete()
    HorizonScore.objects.bulk_create([
        HorizonScore(run=run, horizon=row["horizon"], stage1_r2=row["stage1_r2"], stage2_r2=row["stage2_r2"])
        for row in report.r2_rows
    ])


def _replace_artifacts(run: ExperimentRun, report: RunReport) -> None:
    run.artifacts.all().delete()
    RunArtifact.objects.bulk_create([
        RunArtifact(
            run=run,
            kind=artifact_kind(entry["path"]),
            path=entry["path"],
            sha256=entry["sha256"],
            size=entry["bytes"],
        )
        for entry in report.manifest["files"]
    ])
