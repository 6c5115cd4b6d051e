"""
Django settings for the turbulence restoration project.

The project has no web surface: Django provides the settings layer, the
application registry and the management-command CLI. Tunable numerical
defaults live in the ``TURBULENCE`` dict below and can be overridden from
the environment (or a ``.env`` file loaded with python-dotenv).

For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# env config
load_dotenv()


def env_float(name, default):
    return float(os.getenv(name, default))


def env_int(name, default):
    return int(os.getenv(name, default))


def env_bool(name, default):
    return os.getenv(name, str(default)).lower() == "true"


SECRET_KEY = os.getenv("DJANGO_SECRET_KEY", "turbulence-restoration-cli")

DJANGO_DEBUG = os.getenv("DJANGO_DEBUG", "false").lower() == "true"
DEBUG = DJANGO_DEBUG

ALLOWED_HOSTS = []

# Application definition

INSTALLED_APPS = [
    # my apps
    "core",
    "restoration",
]

# No models are stored: every run is described by its manifest file.
DATABASES = {}


# Internationalization
# https://docs.djangoproject.com/en/5.2/topics/i18n/

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = True

USE_TZ = True


# Logging
# https://docs.djangoproject.com/en/5.2/topics/logging/

LOG_LEVEL = os.getenv("TURBULENCE_LOG_LEVEL", "INFO").upper()

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "loggers": {
        "core": {"handlers": ["console"], "level": LOG_LEVEL, "propagate": False},
        "restoration": {
            "handlers": ["console"],
            "level": LOG_LEVEL,
            "propagate": False,
        },
    },
}


# Restoration defaults
TURBULENCE = {
    # Horn-Schunck optical flow
    "HS_SMOOTHNESS": env_float("TURBULENCE_HS_SMOOTHNESS", 0.01),
    "HS_ITERATIONS": env_int("TURBULENCE_HS_ITERATIONS", 100),
    "HS_LEVELS": env_int("TURBULENCE_HS_LEVELS", 4),
    "HS_SCALE": env_float("TURBULENCE_HS_SCALE", 0.5),
    "HS_WARPS": env_int("TURBULENCE_HS_WARPS", 2),
    # flow inversion hole filling
    # TV blind deconvolution
    "DECONV_ALPHA": env_float("TURBULENCE_DECONV_ALPHA", 0.005),
    "DECONV_MAX_ITERATIONS": env_int("TURBULENCE_DECONV_MAX_ITERATIONS", 300),
    "DECONV_INNER_STEPS": env_int("TURBULENCE_DECONV_INNER_STEPS", 5),
    "DECONV_STEP_SIZE": env_float("TURBULENCE_DECONV_STEP_SIZE", 0.5),
    "DECONV_BACKTRACK": env_float("TURBULENCE_DECONV_BACKTRACK", 0.5),
    "DECONV_TV_EPSILON": env_float("TURBULENCE_DECONV_TV_EPSILON", 1e-3),
    "DECONV_SIGMA_INIT": env_float("TURBULENCE_DECONV_SIGMA_INIT", 1.0),
    "DECONV_ESTIMATE_SIGMA": env_bool("TURBULENCE_DECONV_ESTIMATE_SIGMA", True),
    "DECONV_TOLERANCE": env_float("TURBULENCE_DECONV_TOLERANCE", 1e-7),
    # pipeline
    "KEYFRAME_INDEX": env_int("TURBULENCE_KEYFRAME_INDEX", 0),
    "OUTER_ITERATIONS": env_int("TURBULENCE_OUTER_ITERATIONS", 1),
    "FLOW_SCALE": env_float("TURBULENCE_FLOW_SCALE", 1.0),
    "LOW_MEMORY": env_bool("TURBULENCE_LOW_MEMORY", False),
    "THREADS": env_int("TURBULENCE_THREADS", 1),
    # simulator
    "SIM_AMPLITUDE": env_float("TURBULENCE_SIM_AMPLITUDE", 2.0),
    "SIM_CORRELATION": env_float("TURBULENCE_SIM_CORRELATION", 10.0),
    "SIM_BLUR_MEAN": env_float("TURBULENCE_SIM_BLUR_MEAN", 1.0),
    "SIM_BLUR_JITTER": env_float("TURBULENCE_SIM_BLUR_JITTER", 0.0),
    "SIM_NOISE": env_float("TURBULENCE_SIM_NOISE", 0.01),
    "SIM_SEED": env_int("TURBULENCE_SIM_SEED", 0),
    # metrics
    "PSNR_CAP": env_float("TURBULENCE_PSNR_CAP", 99.0),
    "SSIM_K1": env_float("TURBULENCE_SSIM_K1", 0.01),
    "SSIM_K2": env_float("TURBULENCE_SSIM_K2", 0.03),
    # output
    "IMAGE_FORMAT": os.getenv("TURBULENCE_IMAGE_FORMAT", "png"),
}
