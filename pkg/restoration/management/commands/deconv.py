"""Blind deconvolution of a single image."""

from restoration.serializers import DeconvSerializer
from restoration.services import RestorationService

from ._base import RestorationCommand


class Command(RestorationCommand):
    help = "Jointly estimate a sharp image and its Gaussian blur width."

    def add_command_arguments(self, parser):
        parser.add_argument("--input", required=True, help="Blurred image.")
        parser.add_argument("--out", required=True, help="Restored image file.")
        self.add_deconv_arguments(parser)

    def run(self, options):
        cfg = self.validated(DeconvSerializer, options).to_params()
        written = RestorationService.deconvolve(options["input"], options["out"], cfg)
        self.report(
            f"Wrote {written['restored']} (sigma {written['result'].sigma:.3f})"
        )
