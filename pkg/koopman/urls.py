"""
URL configuration for the koopman application.

URL Patterns:
    - /api/runs/: List and detail views for recorded experiment runs
    - /api/runs/{run_slug}/artifacts/: Nested views for the files of a run

All endpoints are read-only.
"""

from django.urls import include, path
from rest_framework.routers import DefaultRouter
from rest_framework_nested.routers import NestedDefaultRouter

from . import api

router = DefaultRouter()
router.register("runs", api.ExperimentRunViewSet, basename="run")

run_artifact_router = NestedDefaultRouter(router, r"runs", lookup="run", trailing_slash=True)
run_artifact_router.register(r"artifacts", api.RunArtifactViewSet, basename="run-artifacts")

app_name = "koopman"

urlpatterns = [
    path("api/", include(router.urls)),
    path("api/", include(run_artifact_router.urls)),
]
