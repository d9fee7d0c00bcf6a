"""Shared plumbing of the experiment commands."""

import logging
from contextlib import contextmanager

from django.core.management.base import BaseCommand, CommandError

from ...config import load_experiment_config
from ...exceptions import (
    AnsatzOverflowError,
    ConfigurationError,
    DatasetFormatError,
    DimensionError,
    DivergenceError,
    EmptyModelError,
    InstabilityError,
    ScaleError,
)

logger = logging.getLogger(__name__)

USAGE_ERROR = 2
DIVERGENCE_ERROR = 3
IO_ERROR = 4


@contextmanager
def exit_codes():
    """Translates toolkit exceptions into CommandErrors with exit codes."""

    try:
        yield
    except (ConfigurationError, DimensionError) as exc:
        raise CommandError(str(exc), returncode=USAGE_ERROR) from exc
    except (InstabilityError, ScaleError, AnsatzOverflowError, DivergenceError, EmptyModelError) as exc:
        raise CommandError(str(exc), returncode=DIVERGENCE_ERROR) from exc
    except (DatasetFormatError, OSError) as exc:
        raise CommandError(str(exc), returncode=IO_ERROR) from exc


class ExperimentCommand(BaseCommand):
    """A command driven by an experiment config plus overriding flags.

    ``config_flags`` names the options whose dest is a config key. They
    default to None, so only flags given on the command line override the
    file.
    """

    config_flags = ()

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Experiment config file (key = value lines)")
        parser.add_argument("--seed", type=int, help="Seed for every random draw")
        parser.add_argument("--output-dir", dest="output_dir", help="Directory for the written artifacts")

    def load_config(self, options):
        overrides = {key: options.get(key) for key in self.config_flags}
        overrides["seed"] = options.get("seed")
        overrides["output_dir"] = options.get("output_dir")
        return load_experiment_config(options.get("config"), overrides)

    def handle(self, *args, **options):
        with exit_codes():
            self.run(**options)

    def run(self, **options):
        raise NotImplementedError

    def report(self, message):
        self.stdout.write(self.style.SUCCESS(message))
