"""
URL configuration for kdpcproject.

Routes the admin site, the koopman run API and its OpenAPI documentation.
"""

from django.contrib import admin
from django.urls import path, include, re_path
from drf_yasg.views import get_schema_view
from drf_yasg import openapi
from rest_framework import permissions

admin.site.site_header = "Koopman DPC Runs Admin"
admin.site.site_title = "Koopman DPC Runs"
admin.site.index_title = "Recorded experiment runs"

schema_view = get_schema_view(
    openapi.Info(
        title="Koopman DPC Run API",
        default_version="v1",
        description="Read-only access to experiment runs, R² tables and artifacts",
        license=openapi.License(name="MIT License"),
    ),
    public=True,
    permission_classes=(permissions.AllowAny,),
)

urlpatterns = [
    path("admin/", admin.site.urls),
    path("", include("koopman.urls")),
    re_path(
        r"^swagger(?P<format>\.json|\.yaml)$",
        schema_view.without_ui(cache_timeout=0),
        name="schema-json",
    ),
    path("swagger/", schema_view.with_ui("swagger", cache_timeout=0), name="schema-swagger-ui"),
    path("redoc/", schema_view.with_ui("redoc", cache_timeout=0), name="schema-redoc"),
]
