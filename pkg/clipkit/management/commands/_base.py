"""Shared behavior of the toolkit's management commands.

Every command maps toolkit errors to exit codes and stable stderr prefixes:
``validation:`` / ``config:`` (exit 1), ``internal:`` (exit 2) and
``usage:`` for bad arguments (exit 1).
"""
import logging
import sys

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError, handle_default_options

from clipkit.config import RunConfig, load_config, with_overrides
from clipkit.exceptions import ClipkitError, ValidationFailed

logger = logging.getLogger('clipkit')

VERBOSITY_LEVELS = {0: logging.ERROR, 2: logging.DEBUG, 3: logging.DEBUG}


class ClipCommand(BaseCommand):
    requires_system_checks = []
    uses_config = False

    def add_arguments(self, parser):
        parser.add_argument('--threads', type=int, default=settings.SARCLIP['THREADS'],
                            help='Worker threads; results do not depend on it')
        if self.uses_config:
            parser.add_argument('--config', default=None, help='JSON run config (default: $SARCLIP_CONFIG)')
            parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                                help='Override one config key, e.g. train.batch_size=64')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def run_from_argv(self, argv):
        # parse errors raise CommandError instead of exiting with argparse's code 2
        try:
            parser = self.create_parser(argv[0], argv[1])
            options = parser.parse_args(argv[2:])
        except CommandError as exc:
            message = str(exc)
            if message.startswith('Error: '):
                message = message[len('Error: '):]
            self.stderr.write(f'usage: {message}')
            sys.exit(1)
        cmd_options = vars(options)
        args = cmd_options.pop('args', ())
        handle_default_options(options)
        try:
            self.execute(*args, **cmd_options)
        except CommandError as exc:
            self.stderr.write(str(exc))
            sys.exit(exc.returncode)

    def handle(self, *args, **options):
        self.set_log_level(options.get('verbosity', 1))
        try:
            self.run(*args, **options)
        except CommandError:
            raise
        except ValidationFailed as exc:
            raise CommandError(f'{exc.prefix}: {exc}', returncode=1) from exc
        except ClipkitError as exc:
            logger.exception('%s failed', self.name)
            raise CommandError(f'{exc.prefix}: {exc}', returncode=2) from exc
        except Exception as exc:
            logger.exception('%s failed', self.name)
            raise CommandError(f'internal: {exc.__class__.__name__}: {exc}', returncode=2) from exc

    def run(self, *args, **options):
        raise NotImplementedError

    @property
    def name(self):
        return self.__module__.rsplit('.', 1)[-1]

    def set_log_level(self, verbosity):
        level = VERBOSITY_LEVELS.get(verbosity, settings.SARCLIP['LOG_LEVEL'])
        logger.setLevel(level)

    def run_config(self, options, seed=None, params=None, inputs=None, outputs=None):
        train, probe = load_config(options.get('config'), options.get('overrides') or ())
        if seed is not None:
            train = with_overrides(train, seed=seed)
            probe = with_overrides(probe, seed=seed)
        return RunConfig(
            subcommand=self.name,
            inputs=inputs or {},
            outputs=outputs or {},
            seed=train.seed,
            overrides=tuple(options.get('overrides') or ()),
            params=params or {},
            verbosity=options.get('verbosity', 1),
            threads=options.get('threads', 1),
            train=train,
            probe=probe,
        )

    def success(self, message):
        self.stdout.write(self.style.SUCCESS(message))
