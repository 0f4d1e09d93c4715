"""Serializers for the koopman application.

The ``ExperimentConfig*`` serializers validate YAML experiment configs; the
run serializers expose recorded runs through the read-only API.
"""

import numpy as np
from rest_framework import serializers

from .exceptions import KoopmanError
from .models import ExperimentRun, HorizonScore, RunArtifact
from .services.kdpc import RegularizationVariant
from .services.plants import DEFAULT_PARAMETERS, MultisineSpec, make_plant
from .utils.formatters import format_bytes, format_score_range


class BoundsField(serializers.ListField):
    """A ``[lo, hi]`` pair with lo < hi."""

    child = serializers.FloatField()

    def __init__(self, **kwargs):
        kwargs.setdefault("min_length", 2)
        kwargs.setdefault("max_length", 2)
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        lo, hi = super().to_internal_value(data)
        if not lo < hi:
            raise serializers.ValidationError(f"Lower bound {lo} must be below upper bound {hi}")
        return [lo, hi]


class PlantSerializer(serializers.Serializer):
    name = serializers.ChoiceField(choices=sorted(DEFAULT_PARAMETERS))
    params = serializers.JSONField(required=False, default=dict)

    def validate(self, attrs):
        try:
            make_plant(attrs["name"], attrs["params"])
        except (KeyError, TypeError, ValueError, KoopmanError) as e:
            raise serializers.ValidationError({"params": f"Invalid {attrs['name']} parameters: {e}"})
        return attrs


class MultisineSerializer(serializers.Serializer):
    lo = serializers.FloatField(default=-4.0)
    hi = serializers.FloatField(default=4.0)
    band = BoundsField(default=[0.0, 1.0])
    period = serializers.IntegerField(min_value=2, default=1000)
    num_period = serializers.IntegerField(min_value=1, default=1)
    num_sines = serializers.IntegerField(min_value=1, default=25)
    num_trials = serializers.IntegerField(min_value=1, default=40)
    grid_skip = serializers.IntegerField(min_value=1, default=1)

    def validate(self, attrs):
        try:
            MultisineSpec(**{**attrs, "band": tuple(attrs["band"])})
        except KoopmanError as e:
            raise serializers.ValidationError(str(e))
        return attrs


class TrainingSerializer(serializers.Serializer):
    T_ini = serializers.IntegerField(min_value=1)
    N = serializers.IntegerField(min_value=1)
    hidden = serializers.ListField(child=serializers.IntegerField(min_value=1), default=[8, 8], allow_empty=True)
    lr = serializers.FloatField(default=1e-2)
    epochs = serializers.IntegerField(min_value=0, default=5000)
    patience = serializers.IntegerField(min_value=1, default=200)
    train_fraction = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.7)
    pass_through_output = serializers.BooleanField(default=True)
    data_x0 = serializers.ListField(child=serializers.FloatField(), required=False, allow_null=True, default=None)

    def validate_lr(self, value):
        if value <= 0:
            raise serializers.ValidationError("Learning rate must be positive")
        return value

    def validate(self, attrs):
        if not attrs["pass_through_output"] and not attrs["hidden"]:
            raise serializers.ValidationError({"hidden": "A map without pass-through needs a hidden layer"})
        if not 0.0 < attrs["train_fraction"] < 1.0:
            raise serializers.ValidationError({"train_fraction": "Must lie strictly between 0 and 1"})
        return attrs


class ControllerSerializer(serializers.Serializer):
    q = serializers.FloatField(default=10.0)
    R = serializers.ListField(child=serializers.ListField(child=serializers.FloatField()), default=[[1.0]])
    lam = serializers.FloatField(min_value=0.0, default=1e9)
    variant = serializers.ChoiceField(
        choices=[variant.value for variant in RegularizationVariant],
        default=RegularizationVariant.DEVIATION.value,
    )
    u_bounds = BoundsField()
    y_bounds = BoundsField(required=False, allow_null=True, default=None)
    xz_margin = serializers.FloatField(min_value=1.0, default=1.1)
    xz_samples = serializers.IntegerField(min_value=1000, default=20000)
    prediction_matrices = serializers.ChoiceField(choices=["least_squares", "structured"], default="least_squares")
    allow_ridge = serializers.BooleanField(default=False)

    def validate_q(self, value):
        if value <= 0:
            raise serializers.ValidationError("State weight must be positive")
        return value

    def validate_R(self, value):
        R = np.asarray(value, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise serializers.ValidationError("R must be a square matrix")
        if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
            raise serializers.ValidationError("R must be symmetric positive definite")
        return value


class SimulationSerializer(serializers.Serializer):
    x0 = serializers.ListField(child=serializers.FloatField(), allow_empty=False)
    steps = serializers.IntegerField(min_value=1, default=200)


class NmpcSerializer(serializers.Serializer):
    enabled = serializers.BooleanField(default=True)
    q = serializers.FloatField(default=10.0)
    N = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)


class AcceptanceSerializer(serializers.Serializer):
    min_r2 = serializers.FloatField(required=False, allow_null=True, default=None)
    max_infeasible_steps = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)
    max_candidate_failures = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)
    max_decrease_residual = serializers.FloatField(required=False, allow_null=True, default=None)
    max_final_output = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    max_error_norm = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    max_median_error_norm = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    max_xi_after_deactivation = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    max_terminal_violations = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)
    max_cost_ratio = serializers.FloatField(min_value=0.0, required=False, allow_null=True, default=None)
    require_saturation = serializers.BooleanField(default=False)


class ExperimentConfigSerializer(serializers.Serializer):
    """Schema of an experiment config file."""

    name = serializers.SlugField(max_length=100)
    seed = serializers.IntegerField(min_value=0)
    out_dir = serializers.CharField(required=False)
    plant = PlantSerializer()
    multisine = MultisineSerializer(required=False)
    training = TrainingSerializer()
    controller = ControllerSerializer()
    simulation = SimulationSerializer()
    nmpc = NmpcSerializer(required=False)
    acceptance = AcceptanceSerializer(required=False)
    dump_hankels = serializers.BooleanField(default=False)

    def validate(self, attrs):
        plant = make_plant(attrs["plant"]["name"], attrs["plant"]["params"])
        errors = {}
        if len(attrs["simulation"]["x0"]) != plant.n:
            errors["simulation"] = {"x0": f"{plant.name} has {plant.n} states"}
        data_x0 = attrs["training"].get("data_x0")
        if data_x0 is not None and len(data_x0) != plant.n:
            errors["training"] = {"data_x0": f"{plant.name} has {plant.n} states"}
        if np.asarray(attrs["controller"]["R"]).shape != (plant.m, plant.m):
            errors["controller"] = {"R": f"R must be {plant.m}x{plant.m} for {plant.name}"}
        if errors:
            raise serializers.ValidationError(errors)
        return attrs


class HorizonScoreSerializer(serializers.ModelSerializer):
    class Meta:
        model = HorizonScore
        fields = ["horizon", "stage1_r2", "stage2_r2"]


class RunArtifactSerializer(serializers.ModelSerializer):
    """Serializer for artifacts nested under a run."""

    size_display = serializers.SerializerMethodField()

    class Meta:
        model = RunArtifact
        fields = ["id", "kind", "path", "sha256", "size", "size_display"]

    def get_size_display(self, obj):
        return format_bytes(obj.size)


class ExperimentRunListSerializer(serializers.ModelSerializer):
    """Simplified serializer for the run list view."""

    url = serializers.HyperlinkedIdentityField(view_name="koopman:run-detail", lookup_field="slug")
    r2 = serializers.SerializerMethodField()

    class Meta:
        model = ExperimentRun
        fields = ["url", "slug", "name", "plant", "seed", "status", "r2"]

    def get_r2(self, obj):
        return format_score_range(score.stage2_r2 for score in obj.scores.all())


class ExperimentRunDetailSerializer(serializers.ModelSerializer):
    """Run with diagnostics and the per-horizon R² table."""

    scores = HorizonScoreSerializer(many=True, read_only=True)
    artifact_count = serializers.IntegerField(source="artifacts.count", read_only=True)

    class Meta:
        model = ExperimentRun
        fields = [
            "slug",
            "name",
            "plant",
            "seed",
            "status",
            "config_hash",
            "manifest_hash",
            "out_dir",
            "diagnostics",
            "scores",
            "artifact_count",
        ]
