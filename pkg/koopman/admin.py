from django.contrib import admin
from django.urls import reverse
from django.utils.html import format_html, urlencode

from .models import ExperimentRun, HorizonScore, RunArtifact
from .utils.formatters import format_bytes, format_score_range


class HorizonScoreInline(admin.TabularInline):
    model = HorizonScore
    extra = 0


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("name", "plant", "seed", "status", "r2_range", "artifact_count")
    list_filter = ("plant", "status")
    search_fields = ("slug", "name")
    readonly_fields = ("config_hash", "manifest_hash")
    inlines = [HorizonScoreInline]

    def get_prepopulated_fields(self, request, obj=None):
        if obj:
            return {}
        return {"slug": ("name",)}

    def r2_range(self, obj):
        return format_score_range(score.stage2_r2 for score in obj.scores.all())

    def artifact_count(self, obj):
        url = reverse("admin:koopman_runartifact_changelist") + f"?{urlencode({'run__id__exact': obj.id})}"
        return format_html('<a href="{}">{}</a>', url, obj.artifacts.count())


@admin.register(RunArtifact)
class RunArtifactAdmin(admin.ModelAdmin):
    list_display = ("path", "run", "kind", "size_display")
    list_filter = ("kind", "run")
    search_fields = ("path",)

    def size_display(self, obj):
        return format_bytes(obj.size)
