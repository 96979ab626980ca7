"""Pipeline configuration documents.

A config is one JSON object with a section per stage. Omitted fields take
their value from ``settings.FACE_SCULPT``; relative paths are resolved
against the directory of the config file. Validation reports every
violation at once, keyed by ``section.field``.
"""

import json
from pathlib import Path

from django.conf import settings
from rest_framework import serializers

from facesculpt.exceptions import ConfigValidationError
from stylization.features import MODES as EXTRACTOR_MODES
from stylization.optimizer import STYLE_MODES

SECTIONS = ("paths", "stats", "train", "translate", "deform", "render", "extractor", "style")


def default(section, key):
    return lambda: settings.FACE_SCULPT[section][key]


def positive(value):
    if value <= 0:
        raise serializers.ValidationError("Ensure this value is greater than 0.")


class PathField(serializers.CharField):
    """A filesystem path, resolved against ``context["base_dir"]``."""

    def __init__(self, must_exist=True, **kwargs):
        self.must_exist = must_exist
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        path = Path(super().to_internal_value(data)).expanduser()
        if not path.is_absolute():
            path = Path(self.context.get("base_dir", ".")) / path
        if self.must_exist and not path.exists():
            raise serializers.ValidationError(f"Path does not exist: {path}")
        return str(path)


class PathsSerializer(serializers.Serializer):
    mesh = PathField()
    projection = PathField(required=False, allow_null=True, default=None)
    texture = PathField()
    style_image = PathField()
    exemplar_landmarks = PathField()
    portrait_landmarks = PathField(required=False, allow_null=True, default=None)
    normal_dir = PathField(required=False, allow_null=True, default=None)
    art_dir = PathField(required=False, allow_null=True, default=None)
    stats_dir = PathField(required=False, allow_null=True, default=None)
    model_dir = PathField(required=False, allow_null=True, default=None)
    output_dir = PathField(must_exist=False)

    def validate(self, attrs):
        pretrained = attrs.get("stats_dir") and attrs.get("model_dir")
        corpora = attrs.get("normal_dir") and attrs.get("art_dir")
        if not pretrained and not corpora:
            raise serializers.ValidationError(
                "Give either stats_dir and model_dir, or normal_dir and art_dir to train from."
            )
        return attrs


class StatsSerializer(serializers.Serializer):
    pca_components = serializers.IntegerField(min_value=1, default=default("STATS", "PCA_COMPONENTS"))
    clusters = serializers.IntegerField(min_value=1, default=default("STATS", "CLUSTERS"))
    kmeans_max_iter = serializers.IntegerField(min_value=1, default=default("STATS", "KMEANS_MAX_ITER"))
    average_face_passes = serializers.IntegerField(min_value=1, default=default("STATS", "AVERAGE_FACE_PASSES"))


class TrainSerializer(serializers.Serializer):
    lambda_recon_y = serializers.FloatField(min_value=0.0, default=default("TRAIN", "LAMBDA_RECON_Y"))
    lambda_recon_c = serializers.FloatField(min_value=0.0, default=default("TRAIN", "LAMBDA_RECON_C"))
    lambda_kl = serializers.FloatField(min_value=0.0, default=default("TRAIN", "LAMBDA_KL"))
    lambda_recon_s = serializers.FloatField(min_value=0.0, default=default("TRAIN", "LAMBDA_RECON_S"))
    lambda_adv = serializers.FloatField(min_value=0.0, default=default("TRAIN", "LAMBDA_ADV"))
    lambda_class = serializers.FloatField(min_value=0.0, default=default("TRAIN", "LAMBDA_CLASS"))
    lr = serializers.FloatField(validators=[positive], default=default("TRAIN", "LR"))
    batch_size = serializers.IntegerField(min_value=1, default=default("TRAIN", "BATCH_SIZE"))
    epochs = serializers.IntegerField(min_value=0, default=default("TRAIN", "EPOCHS"))
    classifier_epochs = serializers.IntegerField(min_value=0, default=default("TRAIN", "CLASSIFIER_EPOCHS"))
    hidden_width = serializers.IntegerField(min_value=1, default=default("TRAIN", "HIDDEN_WIDTH"))
    style_dim = serializers.IntegerField(min_value=1, default=default("TRAIN", "STYLE_DIM"))
    dtype = serializers.ChoiceField(choices=["float32", "float64"], default=default("TRAIN", "DTYPE"))


class TranslateSerializer(serializers.Serializer):
    scale = serializers.FloatField(min_value=0.0, max_value=1.0, default=1.0)


class DeformSerializer(serializers.Serializer):
    alpha = serializers.FloatField(min_value=0.0, default=default("DEFORM", "ALPHA"))
    lr = serializers.FloatField(validators=[positive], default=default("DEFORM", "LR"))
    iterations = serializers.IntegerField(min_value=0, default=default("DEFORM", "ITERATIONS"))
    grad_tol = serializers.FloatField(min_value=0.0, default=default("DEFORM", "GRAD_TOL"))
    divergence_patience = serializers.IntegerField(min_value=1, default=default("DEFORM", "DIVERGENCE_PATIENCE"))
    plateau_patience = serializers.IntegerField(min_value=1, default=default("DEFORM", "PLATEAU_PATIENCE"))
    lr_decay = serializers.FloatField(validators=[positive], max_value=0.999, default=default("DEFORM", "LR_DECAY"))
    min_lr = serializers.FloatField(validators=[positive], default=default("DEFORM", "MIN_LR"))


class RenderSerializer(serializers.Serializer):
    image_size = serializers.IntegerField(min_value=8, default=default("RENDER", "IMAGE_SIZE"))
    texture_size = serializers.IntegerField(min_value=1, allow_null=True, default=default("RENDER", "TEXTURE_SIZE"))
    background = serializers.FloatField(min_value=0.0, max_value=1.0, default=default("RENDER", "BACKGROUND"))
    azimuth_range = serializers.FloatField(min_value=0.0, max_value=90.0, default=default("RENDER", "AZIMUTH_RANGE"))
    elevation_range = serializers.FloatField(
        min_value=0.0, max_value=90.0, default=default("RENDER", "ELEVATION_RANGE")
    )
    contact_sheet_views = serializers.IntegerField(min_value=1, default=default("RENDER", "CONTACT_SHEET_VIEWS"))


class ExtractorSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=EXTRACTOR_MODES, default=default("EXTRACTOR", "MODE"))
    levels = serializers.IntegerField(min_value=1, default=default("EXTRACTOR", "LEVELS"))
    k_max = serializers.IntegerField(min_value=64, default=default("EXTRACTOR", "K_MAX"))
    path = PathField(required=False, allow_null=True, default=None)

    def validate(self, attrs):
        if attrs["mode"] == "external" and not attrs.get("path"):
            raise serializers.ValidationError({"path": "External features need a feature file."})
        return attrs


class StyleSerializer(serializers.Serializer):
    mode = serializers.ChoiceField(choices=STYLE_MODES, default=default("STYLE", "MODE"))
    beta = serializers.FloatField(min_value=0.0, default=default("STYLE", "BETA"))
    iterations = serializers.IntegerField(min_value=0, default=default("STYLE", "ITERATIONS"))
    lr = serializers.FloatField(validators=[positive], default=default("STYLE", "LR"))
    rmsprop_decay = serializers.FloatField(min_value=0.0, max_value=1.0, default=default("STYLE", "RMSPROP_DECAY"))


class PipelineConfigSerializer(serializers.Serializer):
    paths = PathsSerializer()
    seed = serializers.IntegerField(min_value=0, default=lambda: settings.FACE_SCULPT["SEED"])
    stats = StatsSerializer()
    train = TrainSerializer()
    translate = TranslateSerializer()
    deform = DeformSerializer()
    render = RenderSerializer()
    extractor = ExtractorSerializer()
    style = StyleSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{section: {} for section in SECTIONS if section != "paths"}, **data}
        return super().to_internal_value(data)


class StageDefaultsSerializer(PipelineConfigSerializer):
    """Every section except ``paths``; used where a command works without a full pipeline config."""

    paths = None


def flatten_errors(errors, prefix=""):
    """``{"section.field": [messages]}`` from DRF's nested error structure."""
    if isinstance(errors, dict):
        flat = {}
        for key, value in errors.items():
            flat.update(flatten_errors(value, f"{prefix}.{key}" if prefix else str(key)))
        return flat
    return {prefix or "non_field_errors": [str(message) for message in errors]}


def validate_config(data, base_dir=".", serializer_class=PipelineConfigSerializer):
    serializer = serializer_class(data=data, context={"base_dir": str(base_dir)})
    if not serializer.is_valid():
        raise ConfigValidationError(flatten_errors(serializer.errors))
    return serializer.validated_data


def apply_overrides(data, seed=None, scale=None, beta=None, out=None):
    """Command-line flags win over the config document."""
    data = {key: dict(value) if isinstance(value, dict) else value for key, value in data.items()}
    if seed is not None:
        data["seed"] = seed
    if scale is not None:
        data.setdefault("translate", {})["scale"] = scale
    if beta is not None:
        data.setdefault("style", {})["beta"] = beta
    if out is not None:
        data.setdefault("paths", {})["output_dir"] = str(Path(out).resolve())
    return data


def load_config(path=None, serializer_class=PipelineConfigSerializer, **overrides):
    """Read, override and validate a config file; with no file only stage defaults are returned."""
    if path is None:
        return validate_config(apply_overrides({}, **overrides), serializer_class=StageDefaultsSerializer)
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise ConfigValidationError({"config": [f"Cannot read {path}: {exc}"]}) from exc
    if not isinstance(data, dict):
        raise ConfigValidationError({"config": ["The config document must be a JSON object."]})
    return validate_config(
        apply_overrides(data, **overrides), base_dir=path.parent.resolve(), serializer_class=serializer_class
    )
