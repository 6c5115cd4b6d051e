"""
Parameter factories for tests.

`factory_boy` builds the frozen parameter dataclasses with settings sized
for small test images: fewer pyramid levels and Jacobi sweeps, a shorter
deconvolution, and simulator seeds drawn from a sequence so that every
instance is reproducible yet distinct.

Example:
    >>> cfg = PipelineConfigFactory(keyframe_index=2)
    >>> cfg.flow_params.pyramid_levels
    3
    >>> TurbulenceParamsFactory(amplitude=0).amplitude
    0
"""

import factory

from core.flow import HornSchunckParams
from core.metrics import SsimParams

from .deconv import DeconvConfig
from .register import PipelineConfig
from .turbsim import TurbulenceParams, WavefrontParams


class HornSchunckParamsFactory(factory.Factory):
    class Meta:
        model = HornSchunckParams

    smoothness = 0.01
    iterations_per_level = 60
    pyramid_levels = 3
    pyramid_scale = 0.5
    warps_per_level = 2


class DeconvConfigFactory(factory.Factory):
    class Meta:
        model = DeconvConfig

    alpha = 0.005
    max_iterations = 120
    step_size = 0.5
    tv_epsilon = 1e-3
    sigma_init = 1.0
    estimate_sigma = True
    inner_steps = 5


class PipelineConfigFactory(factory.Factory):
    class Meta:
        model = PipelineConfig

    keyframe_index = 0
    flow_params = factory.SubFactory(HornSchunckParamsFactory)
    deconv = factory.SubFactory(DeconvConfigFactory)
    outer_iterations = 1
    flow_scale = 1.0
    low_memory = False
    threads = 1


class TurbulenceParamsFactory(factory.Factory):
    class Meta:
        model = TurbulenceParams

    amplitude = 2.0
    correlation_length = 10.0
    blur_sigma_mean = 1.0
    blur_sigma_jitter = 0.0
    noise_sigma = 0.01
    seed = factory.Sequence(lambda n: 1000 + n)


class WavefrontParamsFactory(factory.Factory):
    class Meta:
        model = WavefrontParams

    grid_size = 64
    aperture_radius = 0.25
    higher_order_sigma = 0.5
    tilt_jitter = 0.4
    defocus_jitter = 0.2
    pad_factor = 2


class SsimParamsFactory(factory.Factory):
    class Meta:
        model = SsimParams

    k1 = factory.Faker("pyfloat", min_value=0.005, max_value=0.02)
    k2 = factory.Faker("pyfloat", min_value=0.02, max_value=0.05)
