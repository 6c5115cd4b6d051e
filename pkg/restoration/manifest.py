"""
Run manifests: a line-oriented ``key=value`` record of one command run.

Every management command writes one manifest holding the command name, a
creation timestamp, all parameters, the input and output paths and the
wall-clock time of each stage (``timing.<stage>`` in seconds). Parameters
are grouped with dotted prefixes, e.g. ``flow.smoothness=0.01``.

Example:
    >>> manifest = RunManifest("deconv")
    >>> manifest.update("deconv", {"alpha": 0.005})
    >>> with manifest.timing("deconv"):
    ...     ...
    >>> manifest.write("restored.png.manifest.txt")
"""

import logging
import time
from contextlib import contextmanager
from pathlib import Path

from django.utils import timezone
from django.utils.translation import gettext_lazy as _

from core.exceptions import InvalidInputError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.txt"


def format_value(value):
    """Render a parameter value on one line."""

    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, (list, tuple)):
        return ",".join(format_value(v) for v in value)
    return str(value).replace("\\", "\\\\").replace("\n", "\\n")


class RunManifest:
    """
    Ordered collection of manifest entries.

    Keys keep their insertion order; setting a key again replaces its value
    in place.
    """

    def __init__(self, command):
        self.entries = {}
        self.set("command", command)
        self.set("created", timezone.now().isoformat())

    def set(self, key, value):
        if "=" in key or "\n" in key or not key:
            raise InvalidInputError(_("Invalid manifest key %(key)r.") % {"key": key})
        self.entries[key] = format_value(value)

    def update(self, prefix, mapping):
        for key, value in mapping.items():
            self.set(f"{prefix}.{key}" if prefix else key, value)

    def get(self, key, default=None):
        return self.entries.get(key, default)

    @contextmanager
    def timing(self, stage):
        """Record the duration of the enclosed block as ``timing.<stage>``."""

        started = time.perf_counter()
        try:
            yield
        finally:
            elapsed = time.perf_counter() - started
            self.set(f"timing.{stage}", round(elapsed, 6))
            logger.info("Stage %s took %.3fs", stage, elapsed)

    def render(self):
        return "".join(f"{key}={value}\n" for key, value in self.entries.items())

    def write(self, path):
        path = Path(path)
        path.write_text(self.render(), encoding="utf-8")
        logger.debug("Wrote manifest %s", path)
        return path

    @classmethod
    def read(cls, path):
        """Parse a manifest file into a ``{key: value}`` dict of strings."""

        return read_key_values(path)


def manifest_path_for(output):
    """Manifest location for an output: inside a directory, next to a file."""

    output = Path(output)
    if output.is_dir():
        return output / MANIFEST_NAME
    return output.with_name(output.name + ".manifest.txt")


def metrics_manifest_path(scored):
    """Default manifest of a comparison: ``<scored>.metrics.manifest.txt``."""

    scored = Path(scored)
    return scored.with_name(scored.name + ".metrics.manifest.txt")


def read_key_values(path):
    """
    Parse ``key=value`` lines into a dict of strings.

    Blank lines and lines starting with ``#`` are skipped; surrounding
    whitespace of keys and values is stripped.

    Raises:
        InvalidInputError: a line without ``=`` or with an empty key.
        OSError: the file cannot be read.
    """

    entries = {}
    for number, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise InvalidInputError(
                _("%(path)s:%(n)d: expected key=value, got %(line)r.")
                % {"path": path, "n": number, "line": line}
            )
        entries[key.strip()] = value.strip()
    return entries
