"""
Shared plumbing for the dq_engine management commands: --config/--log/--log-level,
effective configuration and the mapping of engine errors onto exit codes.
"""
import copy
import logging
import logging.config

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from dq_engine.config import load_config
from dq_engine.exceptions import DQError

logger = logging.getLogger(__name__)

RUNTIME_FAILURE = 2


def configure_logging(log_format='verbose', level='INFO'):
    """Re-apply settings.LOGGING with the chosen formatter and dq_engine level"""
    config = copy.deepcopy(settings.LOGGING)
    config['handlers']['console']['formatter'] = log_format
    config['loggers']['dq_engine']['level'] = level
    logging.config.dictConfig(config)


class DQBaseCommand(BaseCommand):
    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--config', help='TOML config file (default: $DQ_CONFIG_FILE)')
        parser.add_argument('--log', choices=['verbose', 'json'], default=None,
                            help='Log format on stderr; json writes one object per line')
        parser.add_argument('--log-level', choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], default=None,
                            help='Level for dq_engine loggers')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def config_overrides(self, options):
        """Dotted config keys set by this command's flags; None means not given"""
        return {}

    def handle(self, *args, **options):
        config_path = options.pop('config', None)
        overrides = {'log_format': options.get('log'), 'log_level': options.get('log_level')}
        overrides.update(self.config_overrides(options))
        try:
            config = load_config(config_path, cli_overrides=overrides)
            configure_logging(config.log_format, config.log_level)
            self.run(config, **options)
        except DQError as e:
            logger.error(f"{type(e).__name__}: {e}")
            raise CommandError(str(e), returncode=RUNTIME_FAILURE)
        except OSError as e:
            logger.error(f"I/O failure: {e}")
            raise CommandError(str(e), returncode=RUNTIME_FAILURE)

    def run(self, config, **options):
        raise NotImplementedError
