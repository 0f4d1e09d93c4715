"""Loading experiment configs from YAML."""

import hashlib
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from rest_framework import serializers

from koopman.conf import koopman_setting
from koopman.exceptions import ArtifactError
from koopman.serializers import ExperimentConfigSerializer
from koopman.services.experiments import ExperimentConfig
from koopman.utils.artifact_io import dumps


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ArtifactError(f"Config file not found: {path}") from e
    except (OSError, yaml.YAMLError) as e:
        raise ArtifactError(f"Failed to read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise serializers.ValidationError({"non_field_errors": [f"{path} does not hold a mapping"]})
    return data


def default_out_dir(name: str, seed: int) -> Path:
    return Path(koopman_setting("ARTIFACT_ROOT")) / name / f"seed-{seed}"


def parse_config(
    data: Dict[str, Any],
    seed: Optional[int] = None,
    out: Optional[Union[str, Path]] = None,
) -> ExperimentConfig:
    """Validate raw config data, apply the ``--seed``/``--out`` overrides.

    Raises:
        serializers.ValidationError: with per-field messages.
    """
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["out_dir"] = str(out)
    serializer = ExperimentConfigSerializer(data=data)
    serializer.is_valid(raise_exception=True)
    validated = serializer.validated_data
    if not validated.get("out_dir"):
        validated["out_dir"] = str(default_out_dir(validated["name"], validated["seed"]))
    return ExperimentConfig.from_dict(validated)


def load_config(
    path: Union[str, Path],
    seed: Optional[int] = None,
    out: Optional[Union[str, Path]] = None,
) -> ExperimentConfig:
    return parse_config(read_config_file(path), seed=seed, out=out)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical config, the output directory left out."""
    return hashlib.sha256(dumps(cfg.canonical_dict()).encode("utf-8")).hexdigest()
