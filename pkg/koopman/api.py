"""API views for the koopman application.

Runs are written by the ``report`` and ``pipeline`` commands; the API only
reads them back.
"""

from django_filters.rest_framework import DjangoFilterBackend
from rest_framework.exceptions import NotFound
from rest_framework.filters import SearchFilter
from rest_framework.viewsets import ReadOnlyModelViewSet

from .models import ExperimentRun, RunArtifact
from .serializers import ExperimentRunDetailSerializer, ExperimentRunListSerializer, RunArtifactSerializer


class ExperimentRunViewSet(ReadOnlyModelViewSet):
    """Recorded experiment runs, filterable by plant and status."""

    lookup_field = "slug"
    filter_backends = [DjangoFilterBackend, SearchFilter]
    filterset_fields = ["plant", "status"]
    search_fields = ["slug", "name"]

    def get_queryset(self):
        return ExperimentRun.objects.prefetch_related("scores").all()

    def get_serializer_class(self):
        if self.action == "list":
            return ExperimentRunListSerializer
        return ExperimentRunDetailSerializer


class RunArtifactViewSet(ReadOnlyModelViewSet):
    """Artifacts of one run, ordered by path."""

    serializer_class = RunArtifactSerializer
    queryset = RunArtifact.objects.none()
    filter_backends = [DjangoFilterBackend]
    filterset_fields = ["kind"]

    def get_queryset(self):
        run_slug = self.kwargs.get("run_slug")
        if not run_slug:
            return RunArtifact.objects.none()
        try:
            run = ExperimentRun.objects.get(slug=run_slug)
        except ExperimentRun.DoesNotExist:
            raise NotFound(f"Run with slug '{run_slug}' does not exist")
        return RunArtifact.objects.filter(run=run).order_by("path")
