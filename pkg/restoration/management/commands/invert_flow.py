"""Invert a `.flo` displacement field."""

from restoration.services import RestorationService

from ._base import RestorationCommand


class Command(RestorationCommand):
    help = "Invert the flow in --input by weighted splatting and write it to --out."

    def add_command_arguments(self, parser):
        parser.add_argument("--input", required=True, help="Input .flo file.")
        parser.add_argument("--out", required=True, help="Output .flo file.")

    def run(self, options):
        written = RestorationService.invert(options["input"], options["out"])
        self.report(f"Wrote {written['output']}")
