import json
import logging
import sys

from django.core.management.base import BaseCommand

from facesculpt.exceptions import FaceSculptError
from pipeline.serializers import StageDefaultsSerializer, load_config

logger = logging.getLogger(__name__)

ERROR_EXIT_STATUS = 2


class FaceSculptCommand(BaseCommand):
    """Base for the pipeline subcommands.

    Subclasses implement ``run``. Domain errors become a JSON report on
    stderr and exit status 2; argument errors keep Django's status 1.
    """

    config_flags = ("config", "seed")
    config_required = False

    def add_arguments(self, parser):
        if "config" in self.config_flags:
            parser.add_argument(
                "--config",
                required=self.config_required,
                help="Pipeline config JSON; stage sections override the defaults.",
            )
        if "seed" in self.config_flags:
            parser.add_argument("--seed", type=int, help="Global seed for every stochastic stage.")
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def stage_config(self, options, **overrides):
        """Validated config sections; with no ``--config`` only the stage defaults."""
        flags = {"seed": options.get("seed"), **overrides}
        return load_config(options.get("config"), serializer_class=StageDefaultsSerializer, **flags)

    def report(self, payload):
        self.stdout.write(json.dumps(payload, indent=2, default=str))

    def handle(self, *args, **options):
        try:
            return self.run(*args, **options)
        except FaceSculptError as exc:
            logger.error("command_failed command=%s error=%s", self.__module__.rsplit(".", 1)[-1], exc.code)
            self.stderr.write(json.dumps(exc.as_report(), default=str))
            sys.exit(ERROR_EXIT_STATUS)

    def run(self, *args, **options):
        raise NotImplementedError
