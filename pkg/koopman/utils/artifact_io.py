"""Reading and writing run artifacts (CSV, versioned JSON, content hashes)."""

import csv
import hashlib
import json
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from koopman.exceptions import ArtifactError
from koopman.services.plants import Trajectory

PathLike = Union[str, Path]


def format_float(value: float) -> str:
    """Shortest text that reads back to the same double."""
    return repr(float(value))


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps(data: Any) -> str:
    return json.dumps(data, default=_json_default, sort_keys=True, indent=2) + "\n"


def _prepare(path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def write_json(path: PathLike, data: Any) -> Path:
    path = _prepare(path)
    try:
        path.write_text(dumps(data), encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"Failed to write {path}: {e}") from e
    return path


def read_json(path: PathLike) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ArtifactError(f"Artifact not found: {path}") from e
    except (OSError, ValueError) as e:
        raise ArtifactError(f"Failed to read {path}: {e}") from e


def write_versioned(path: PathLike, kind: str, version: int, payload: Mapping[str, Any]) -> Path:
    return write_json(path, {"kind": kind, "format_version": version, "payload": dict(payload)})


def read_versioned(path: PathLike, kind: str, version: int) -> Dict[str, Any]:
    """Payload of a versioned JSON file.

    Raises:
        ArtifactError: if the file holds another kind or a newer format.
    """
    data = read_json(path)
    if not isinstance(data, dict) or data.get("kind") != kind:
        raise ArtifactError(f"{path} does not hold a {kind} artifact")
    if data.get("format_version", 0) > version:
        raise ArtifactError(f"{path} has format version {data['format_version']}, this build reads up to {version}")
    return data["payload"]


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(65536), b""):
                digest.update(chunk)
    except OSError as e:
        raise ArtifactError(f"Failed to hash {path}: {e}") from e
    return digest.hexdigest()


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format_float(value)
    return str(value)


def write_rows_csv(path: PathLike, fieldnames: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> Path:
    path = _prepare(path)
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(fieldnames)
            for row in rows:
                writer.writerow([_cell(row.get(name)) for name in fieldnames])
    except OSError as e:
        raise ArtifactError(f"Failed to write {path}: {e}") from e
    return path


def read_rows_csv(path: PathLike) -> List[Dict[str, str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            return list(csv.DictReader(handle))
    except FileNotFoundError as e:
        raise ArtifactError(f"Artifact not found: {path}") from e
    except OSError as e:
        raise ArtifactError(f"Failed to read {path}: {e}") from e


def write_matrix_csv(path: PathLike, matrix: np.ndarray) -> Path:
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    header = [f"c{j}" for j in range(matrix.shape[1])]
    return write_rows_csv(path, header, (dict(zip(header, row)) for row in matrix))


def trajectory_fieldnames(m: int, p: int, n: Optional[int] = None) -> List[str]:
    names = ["k"] + [f"u{i + 1}" for i in range(m)] + [f"y{i + 1}" for i in range(p)]
    if n:
        names += [f"x{i + 1}" for i in range(n)]
    return names


def write_trajectory_csv(path: PathLike, traj: Trajectory) -> Path:
    """One row per sample k = 0..s; the input cells of the last row stay empty."""
    n = None if traj.x is None else traj.x.shape[1]
    fieldnames = trajectory_fieldnames(traj.m, traj.p, n)
    rows = []
    for k in range(traj.num_steps + 1):
        row: Dict[str, Any] = {"k": k}
        if k < traj.num_steps:
            row.update({f"u{i + 1}": traj.u[k, i] for i in range(traj.m)})
        row.update({f"y{i + 1}": traj.y[k, i] for i in range(traj.p)})
        if n:
            row.update({f"x{i + 1}": traj.x[k, i] for i in range(n)})
        rows.append(row)
    return write_rows_csv(path, fieldnames, rows)


def read_trajectory_csv(path: PathLike) -> Trajectory:
    rows = read_rows_csv(path)
    if len(rows) < 2:
        raise ArtifactError(f"{path} holds fewer than two samples")
    columns = list(rows[0].keys())

    def block(prefix: str) -> List[str]:
        return [name for name in columns if name[0] == prefix and name[1:].isdigit()]

    u_cols, y_cols, x_cols = block("u"), block("y"), block("x")
    try:
        u = np.array([[float(row[c]) for c in u_cols] for row in rows[:-1]])
        y = np.array([[float(row[c]) for c in y_cols] for row in rows])
        x = np.array([[float(row[c]) for c in x_cols] for row in rows]) if x_cols else None
    except ValueError as e:
        raise ArtifactError(f"{path} has a malformed cell: {e}") from e
    return Trajectory(u, y, x)
