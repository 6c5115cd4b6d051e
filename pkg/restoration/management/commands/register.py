"""Build the registration template of a frame directory."""

from restoration.serializers import (
    DeconvSerializer,
    HornSchunckSerializer,
    OutputSerializer,
    PipelineSerializer,
)
from restoration.services import RestorationService

from ._base import RestorationCommand


class PipelineCommand(RestorationCommand):
    """Commands that register a frame directory."""

    def add_command_arguments(self, parser):
        self.add_pipeline_arguments(parser)
        self.add_flow_arguments(parser)
        self.add_format_argument(parser)

    def pipeline_config(self, options):
        flow = self.validated(HornSchunckSerializer, options).to_params()
        deconv = self.validated(DeconvSerializer, options).to_params()
        return self.validated(PipelineSerializer, options).to_params(
            flow_params=flow, deconv=deconv
        )

    def output_options(self, options):
        return {
            "image_format": self.validated(OutputSerializer, options).validated_data.get(
                "format"
            ),
            "save_flows": options["save_flows"],
            "save_registered": options["save_registered"],
        }


class Command(PipelineCommand):
    help = (
        "Register every frame to the undistorted geometry and write the "
        "averaged template (template.png) to --out."
    )

    def run(self, options):
        written = RestorationService.register(
            options["frames"],
            options["out"],
            self.pipeline_config(options),
            **self.output_options(options),
        )
        self.report(f"Wrote {written['template']}")
