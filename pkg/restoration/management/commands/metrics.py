"""PSNR and SSIM between two images."""

from restoration.serializers import MetricsSerializer
from restoration.services import RestorationService

from ._base import RestorationCommand


class Command(RestorationCommand):
    help = "Print the PSNR (dB) and SSIM of two images of the same size."

    def add_command_arguments(self, parser):
        parser.add_argument("first", help="Reference image.")
        parser.add_argument("second", help="Image to compare.")
        parser.add_argument(
            "--peak",
            type=float,
            help="Intensity scale for PSNR, e.g. 255 for 8-bit figures (default 1).",
        )
        parser.add_argument(
            "--manifest",
            help="Manifest file (default: <second>.metrics.manifest.txt).",
        )

    def run(self, options):
        peak = self.validated(MetricsSerializer, options).validated_data["peak"]
        scores = RestorationService.compare(
            options["first"], options["second"], peak, manifest_path=options["manifest"]
        )
        self.stdout.write(f"PSNR: {scores['psnr']:.4f} dB")
        self.stdout.write(f"SSIM: {scores['ssim']:.6f}")
