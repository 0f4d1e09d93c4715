"""Access to the ``KOOPMAN`` settings dict with built-in fallbacks."""

from typing import Any

from django.conf import settings

DEFAULTS = {
    "ARTIFACT_ROOT": "runs",
    "QP_TOLERANCE": 1e-8,
    "QP_MAX_ITER": 20000,
    "QP_OVER_RELAXATION": 1.6,
    "DARE_TOLERANCE": 1e-12,
    "DARE_MAX_ITER": 10000,
    "INVARIANT_SET_MAX_ITER": 200,
    "INVARIANT_SET_MAX_ROWS": 4000,
    "POLYTOPE_MAX_DIM": 12,
    "XZ_SAMPLES": 20000,
    "XZ_MARGIN": 1.1,
    "TRAIN_LOG_EVERY": 500,
}


def koopman_setting(name: str) -> Any:
    if name not in DEFAULTS:
        raise KeyError(f"Unknown KOOPMAN setting: {name}")
    return getattr(settings, "KOOPMAN", {}).get(name, DEFAULTS[name])
