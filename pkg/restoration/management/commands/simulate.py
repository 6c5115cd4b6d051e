"""Render a synthetic turbulent sequence from a ground-truth image."""

from restoration.serializers import OutputSerializer, SimulationSerializer
from restoration.services import RestorationService

from ._base import RestorationCommand


class Command(RestorationCommand):
    help = (
        "Warp, blur and add noise to a ground-truth image, writing numbered "
        "frames (frame_0001.png, ...) and a manifest to --out."
    )

    def add_command_arguments(self, parser):
        parser.add_argument("--gt", required=True, help="Ground-truth image.")
        parser.add_argument("--frames", required=True, type=int, help="Frame count.")
        parser.add_argument("--out", required=True, help="Output directory.")
        parser.add_argument("--amp", type=float, help="RMS warp amplitude (px).")
        parser.add_argument("--corr", type=float, help="Warp correlation length (px).")
        parser.add_argument("--blur", type=float, help="Mean blur sigma (px).")
        parser.add_argument("--blur-jitter", type=float, help="Blur sigma spread (px).")
        parser.add_argument("--noise", type=float, help="Noise standard deviation.")
        parser.add_argument("--seed", type=int)
        parser.add_argument(
            "--save-flows", action="store_true", help="Also write the true flows."
        )
        self.add_format_argument(parser)

    def run(self, options):
        params = self.validated(SimulationSerializer, options)
        output = self.validated(OutputSerializer, options)

        written = RestorationService.simulate(
            options["gt"],
            options["out"],
            params.validated_data["frames"],
            params.to_params(),
            image_format=output.validated_data.get("format"),
            save_flows=options["save_flows"],
        )
        self.report(f"Wrote {len(written['frames'])} frames to {options['out']}")
