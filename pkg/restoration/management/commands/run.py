"""Full restoration: registration template followed by blind deconvolution."""

from restoration.services import RestorationService

from .register import PipelineCommand


class Command(PipelineCommand):
    help = (
        "Restore a turbulent frame directory: template registration, blind "
        "deconvolution and optional outer iterations. Writes restored.png, "
        "template.png and a manifest to --out."
    )

    def add_command_arguments(self, parser):
        super().add_command_arguments(parser)
        parser.add_argument("--outer-iterations", type=int)
        self.add_deconv_arguments(parser)

    def run(self, options):
        written = RestorationService.run(
            options["frames"],
            options["out"],
            self.pipeline_config(options),
            **self.output_options(options),
        )
        self.report(f"Wrote {written['restored']} after {written['rounds']} round(s)")
