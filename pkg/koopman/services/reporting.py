"""
Report emission: R² table, trajectory CSVs, diagnostics and a hashed manifest.

Nothing time-dependent is written, so rerunning a config with the same seed
yields a byte-identical report directory.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from koopman.exceptions import ArtifactError
from koopman.services.plants import Trajectory
from koopman.utils.artifact_io import sha256_file, write_json, write_rows_csv, write_trajectory_csv

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
R2_FIELDS = ["horizon", "stage1_r2", "stage2_r2"]


def empty_closed_loop_summary() -> Dict[str, Any]:
    return {
        "steps": 0,
        "infeasible_steps": 0,
        "fallback_steps": 0,
        "candidate_failures": 0,
        "saturated_steps": 0,
        "decrease_max_residual": 0.0,
        "final_abs_output": 0.0,
        "max_error_norm": 0.0,
        "median_error_norm": 0.0,
        "max_xi": 0.0,
        "max_xi_after_deactivation": 0.0,
        "max_terminal_margin": 0.0,
        "max_abs_input": 0.0,
        "cumulative_stage_cost": 0.0,
    }


@dataclass
class ReportArtifacts:
    r2_rows: List[Dict[str, Any]] = field(default_factory=list)
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    checks: List[Dict[str, Any]] = field(default_factory=list)
    trajectories: Mapping[str, Trajectory] = field(default_factory=dict)


@dataclass
class RunReport:
    out_dir: Path
    r2_rows: List[Dict[str, Any]]
    diagnostics: Dict[str, Any]
    checks: List[Dict[str, Any]]
    manifest: Dict[str, Any]

    @property
    def passed(self) -> bool:
        return all(check["passed"] for check in self.checks)

    @property
    def failed_checks(self) -> List[Dict[str, Any]]:
        return [check for check in self.checks if not check["passed"]]

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_NAME


def build_manifest(root: Path, exclude: Optional[Path] = None) -> Dict[str, Any]:
    """Relative path, size and SHA-256 of every file under ``root``, sorted by path."""
    files = []
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if exclude is not None and path.resolve() == exclude.resolve():
            continue
        files.append({
            "path": path.relative_to(root).as_posix(),
            "bytes": path.stat().st_size,
            "sha256": sha256_file(path),
        })
    return {"files": files}


def emit_report(out_dir, artifacts: ReportArtifacts, root=None) -> RunReport:
    """Write the report files into ``out_dir`` and hash everything under ``root``.

    ``root`` defaults to ``out_dir``. Missing closed-loop counters are filled
    with zeros.

    Raises:
        ArtifactError: naming the path that could not be written or hashed.
    """
    out_dir = Path(out_dir)
    root = out_dir if root is None else Path(root)
    diagnostics = dict(artifacts.diagnostics)
    diagnostics["kdpc"] = {**empty_closed_loop_summary(), **(diagnostics.get("kdpc") or {})}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactError(f"Failed to create report directory {out_dir}: {e}") from e

    write_rows_csv(out_dir / "r2.csv", R2_FIELDS, artifacts.r2_rows)
    for name, traj in sorted(artifacts.trajectories.items()):
        write_trajectory_csv(out_dir / "trajectories" / f"{name}.csv", traj)
    write_json(out_dir / "diagnostics.json", {"diagnostics": diagnostics, "checks": artifacts.checks})

    manifest_path = out_dir / MANIFEST_NAME
    manifest = build_manifest(root, exclude=manifest_path)
    write_json(manifest_path, manifest)
    failed = [check["check"] for check in artifacts.checks if not check["passed"]]
    if failed:
        logger.warning("report in %s: failed checks %s", out_dir, ", ".join(failed))
    else:
        logger.info("report in %s: %d checks passed", out_dir, len(artifacts.checks))
    return RunReport(out_dir, list(artifacts.r2_rows), diagnostics, list(artifacts.checks), manifest)
