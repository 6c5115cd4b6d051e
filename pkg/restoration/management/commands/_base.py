"""
Shared plumbing of the restoration management commands.

Exit codes follow `core.constants.ExitCode`:
    - 0 when the command finished,
    - 1 on I/O failures and unreadable files,
    - 2 on usage errors: bad flags (argparse), rejected parameter values
      (serializers) and inputs that violate a precondition.

Numeric flags default to ``None`` so that ``--config`` values, then
``settings.TURBULENCE``, fill in whatever was not given explicitly.
"""

import argparse
import logging

from django.core.management.base import BaseCommand, CommandError
from django.utils.translation import gettext_lazy as _
from rest_framework.exceptions import ValidationError

from core.constants import ExitCode, ImageFormat
from core.exceptions import FlowFormatError, ImageFormatError, InvalidInputError
from restoration.manifest import read_key_values

# Options that only exist on the command line.
_FLAG_ONLY = {
    "config",
    "verbosity",
    "settings",
    "pythonpath",
    "traceback",
    "no_color",
    "force_color",
    "skip_checks",
}


def format_errors(detail):
    """Flatten a serializer error dict into ``field: message`` lines."""

    if isinstance(detail, dict):
        return "; ".join(
            f"{field}: {' '.join(str(m) for m in messages)}"
            for field, messages in detail.items()
        )
    return " ".join(str(m) for m in detail)


class RestorationCommand(BaseCommand):
    """
    Base class mapping library errors onto the exit-code contract.

    Subclasses implement ``add_command_arguments`` and ``run``; ``run``
    receives the options with ``--config`` values merged in.
    """

    def add_arguments(self, parser):
        parser.add_argument(
            "--config",
            help="key=value file; keys are option names (e.g. alpha, hs_levels). "
            "Explicit flags take precedence.",
        )
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    @staticmethod
    def add_format_argument(parser):
        parser.add_argument(
            "--format",
            choices=ImageFormat.values,
            help="Extension of the written images (default: settings).",
        )

    @staticmethod
    def add_flow_arguments(parser):
        group = parser.add_argument_group("optical flow")
        group.add_argument("--hs-smoothness", type=float)
        group.add_argument("--hs-iterations", type=int)
        group.add_argument("--hs-levels", type=int)
        group.add_argument("--hs-scale", type=float)
        group.add_argument("--hs-warps", type=int)

    @staticmethod
    def add_pipeline_arguments(parser):
        group = parser.add_argument_group("registration")
        group.add_argument(
            "--frames",
            required=True,
            help="Directory of frames; files are ordered by name, so number "
            "them with zero padding (frame_0001.png, frame_0002.png, ...).",
        )
        group.add_argument("--out", required=True, help="Output directory.")
        group.add_argument("--keyframe", type=int)
        group.add_argument("--flow-scale", type=float)
        group.add_argument("--low-memory", action=argparse.BooleanOptionalAction)
        group.add_argument("--threads", type=int)
        group.add_argument("--save-flows", action="store_true")
        group.add_argument("--save-registered", action="store_true")

    @staticmethod
    def add_deconv_arguments(parser):
        group = parser.add_argument_group("deconvolution")
        group.add_argument("--alpha", type=float)
        group.add_argument("--iterations", type=int)
        group.add_argument("--inner-steps", type=int)
        group.add_argument("--step-size", type=float)
        group.add_argument("--tv-epsilon", type=float)
        group.add_argument("--sigma-init", type=float)
        group.add_argument("--estimate-sigma", action=argparse.BooleanOptionalAction)
        group.add_argument("--tolerance", type=float)

    def merge_config(self, options):
        path = options.get("config")
        if not path:
            return options

        merged = dict(options)
        for key, value in read_key_values(path).items():
            dest = key.replace("-", "_")
            if dest not in options or dest in _FLAG_ONLY:
                raise InvalidInputError(
                    _("Unknown option %(key)r in %(path)s.") % {"key": key, "path": path}
                )
            if merged[dest] is None:
                merged[dest] = value
        return merged

    def configure_logging(self, verbosity):
        level = {0: logging.WARNING, 1: None}.get(verbosity, logging.DEBUG)
        if level is not None:
            for name in ("core", "restoration"):
                logging.getLogger(name).setLevel(level)

    @staticmethod
    def validated(serializer_class, options, **kwargs):
        serializer = serializer_class(data=options, **kwargs)
        serializer.is_valid(raise_exception=True)
        return serializer

    def handle(self, *args, **options):
        self.configure_logging(options.get("verbosity", 1))
        try:
            self.run(self.merge_config(options))
        except ValidationError as exc:
            raise CommandError(
                f"Invalid parameters: {format_errors(exc.detail)}",
                returncode=ExitCode.USAGE,
            ) from exc
        except InvalidInputError as exc:
            raise CommandError(str(exc), returncode=ExitCode.USAGE) from exc
        except (OSError, ImageFormatError, FlowFormatError) as exc:
            raise CommandError(str(exc), returncode=ExitCode.FAILURE) from exc

    def run(self, options):
        raise NotImplementedError

    def report(self, message):
        if self.verbosity >= 1:
            self.stdout.write(self.style.SUCCESS(message))

    def execute(self, *args, **options):
        self.verbosity = options.get("verbosity", 1)
        return super().execute(*args, **options)
