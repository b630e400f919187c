import logging
import sys

from django.core.management import call_command
from django.core.management.base import BaseCommand

from airex import __version__
from airex.airquality.exceptions import ConfigError
from airex.airquality.manifest import RunManifest

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = (
        "Re-run a command from its manifest.json. Use --out to write the "
        "outputs somewhere else and compare them with the original run."
    )

    def add_arguments(self, parser):
        parser.add_argument("manifest", help="Path to a manifest.json.")
        parser.add_argument("--out", default=None, help="Output directory for the re-run.")

    def handle(self, *args, **options):
        try:
            manifest = RunManifest.read(options["manifest"])
        except ConfigError as err:
            self.stderr.write(self.style.ERROR(str(err)))
            sys.exit(1)
        if manifest.code_version != __version__:
            logger.warning(
                "Manifest was written by airex %s, replaying with %s",
                manifest.code_version,
                __version__,
            )
        replayed = manifest.replay_options(out=options["out"])
        self.stdout.write(
            f"Replaying {manifest.command} (seed {manifest.seed}) into {replayed['out']}"
        )
        call_command(manifest.command, stdout=self.stdout._out, stderr=self.stderr._out, **replayed)
