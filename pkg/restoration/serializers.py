"""
Validation of command-line parameter groups.

The management commands gather flag values (merged over an optional
``--config`` file, whose values arrive as strings) into plain dicts and pass
each group through one of these serializers. Validated data is turned into
the library's parameter objects with ``to_params()``; missing values fall
back to ``settings.TURBULENCE``.
"""

from django.utils.translation import gettext_lazy as _
from rest_framework import serializers

from core.constants import ImageFormat
from core.flow import HornSchunckParams

from .deconv import DeconvConfig
from .register import PipelineConfig
from .turbsim import TurbulenceParams


def positive(value):
    if value <= 0:
        raise serializers.ValidationError(_("Must be greater than zero."))
    return value


class FlagSerializer(serializers.Serializer):
    """Drops ``None`` inputs so that unset flags fall back to defaults."""

    def __init__(self, *args, **kwargs):
        data = kwargs.get("data")
        if data is not None:
            kwargs["data"] = {k: v for k, v in data.items() if v is not None}
        super().__init__(*args, **kwargs)


class ParamsSerializer(FlagSerializer):
    """
    Subclasses map their field names to keyword arguments of a parameter
    class through ``Meta.params_class`` and ``Meta.field_map``.
    """

    def to_params(self, **extra):
        field_map = self.Meta.field_map
        values = {field_map[k]: v for k, v in self.validated_data.items() if k in field_map}
        values.update(extra)
        return self.Meta.params_class.from_settings(**values)


class HornSchunckSerializer(ParamsSerializer):
    hs_smoothness = serializers.FloatField(required=False, validators=[positive])
    hs_iterations = serializers.IntegerField(required=False, min_value=1)
    hs_levels = serializers.IntegerField(required=False, min_value=1)
    hs_scale = serializers.FloatField(required=False, min_value=0, max_value=1)
    hs_warps = serializers.IntegerField(required=False, min_value=1)

    class Meta:
        params_class = HornSchunckParams
        field_map = {
            "hs_smoothness": "smoothness",
            "hs_iterations": "iterations_per_level",
            "hs_levels": "pyramid_levels",
            "hs_scale": "pyramid_scale",
            "hs_warps": "warps_per_level",
        }

    def validate_hs_scale(self, value):
        if not 0 < value < 1:
            raise serializers.ValidationError(_("Pyramid scale must lie in (0, 1)."))
        return value


class DeconvSerializer(ParamsSerializer):
    alpha = serializers.FloatField(required=False, validators=[positive])
    iterations = serializers.IntegerField(required=False, min_value=1)
    inner_steps = serializers.IntegerField(required=False, min_value=1)
    step_size = serializers.FloatField(required=False, validators=[positive])
    tv_epsilon = serializers.FloatField(required=False, validators=[positive])
    sigma_init = serializers.FloatField(required=False, validators=[positive])
    estimate_sigma = serializers.BooleanField(required=False)
    tolerance = serializers.FloatField(required=False, min_value=0)

    class Meta:
        params_class = DeconvConfig
        field_map = {
            "alpha": "alpha",
            "iterations": "max_iterations",
            "inner_steps": "inner_steps",
            "step_size": "step_size",
            "tv_epsilon": "tv_epsilon",
            "sigma_init": "sigma_init",
            "estimate_sigma": "estimate_sigma",
            "tolerance": "tolerance",
        }


class PipelineSerializer(ParamsSerializer):
    keyframe = serializers.IntegerField(required=False, min_value=0)
    outer_iterations = serializers.IntegerField(required=False, min_value=1)
    flow_scale = serializers.FloatField(required=False, max_value=1)
    low_memory = serializers.BooleanField(required=False)
    threads = serializers.IntegerField(required=False, min_value=1)

    class Meta:
        params_class = PipelineConfig
        field_map = {
            "keyframe": "keyframe_index",
            "outer_iterations": "outer_iterations",
            "flow_scale": "flow_scale",
            "low_memory": "low_memory",
            "threads": "threads",
        }

    def validate_flow_scale(self, value):
        if value <= 0:
            raise serializers.ValidationError(_("Flow scale must lie in (0, 1]."))
        return value


class SimulationSerializer(ParamsSerializer):
    frames = serializers.IntegerField(min_value=1)
    amp = serializers.FloatField(required=False, min_value=0)
    corr = serializers.FloatField(required=False, min_value=1)
    blur = serializers.FloatField(required=False, min_value=0)
    blur_jitter = serializers.FloatField(required=False, min_value=0)
    noise = serializers.FloatField(required=False, min_value=0)
    seed = serializers.IntegerField(required=False, min_value=0)

    class Meta:
        params_class = TurbulenceParams
        field_map = {
            "amp": "amplitude",
            "corr": "correlation_length",
            "blur": "blur_sigma_mean",
            "blur_jitter": "blur_sigma_jitter",
            "noise": "noise_sigma",
            "seed": "seed",
        }


class OutputSerializer(FlagSerializer):
    """Output image format shared by the commands that write images."""

    format = serializers.ChoiceField(choices=ImageFormat.choices, required=False)


class MetricsSerializer(FlagSerializer):
    peak = serializers.FloatField(validators=[positive], default=1.0)
