# main.py - IPA experiment CLI: generate, train, evaluate, sweep and collapse
import argparse
import importlib
import logging
import os
import sys
from typing import Dict, List, Optional

import colorlog
from dotenv import load_dotenv

from ipa.errors import CheckpointError, ConfigError, DataError, FeatureLookupError
from utils.config import EXIT_CONFIG, EXIT_DATA, EXIT_OK, HISTORY_HELP, LOG_COLORS, LOG_FORMAT, LOG_LEVEL

logger = logging.getLogger(__name__)

_logging_configured = False


def configure_logging(level: Optional[str] = None):
    """Colored console logging on the root logger; run commands add their own run.log handler"""
    global _logging_configured
    level = (level or os.getenv("LOG_LEVEL") or LOG_LEVEL).upper()
    root = logging.getLogger()
    root.setLevel(level)
    if _logging_configured:
        return
    handler = colorlog.StreamHandler(sys.stderr)
    handler.setFormatter(colorlog.ColoredFormatter("%(log_color)s" + LOG_FORMAT, log_colors=LOG_COLORS))
    root.addHandler(handler)
    _logging_configured = True


class IpaCli:
    """Top-level parser; every command lives in its own extension module exposing setup(app)"""

    def __init__(self):
        self.parser = argparse.ArgumentParser(
            prog="ipa",
            description="Assemble, train and analyze explicit feature-interaction CTR models "
                        "from (interaction, pooling, aggregator) codes.",
            epilog=HISTORY_HELP,
        )
        self.subparsers = self.parser.add_subparsers(dest="command", metavar="COMMAND")
        self.subparsers.required = True
        self.commands: Dict[str, object] = {}

        self.initial_extensions = [
            'commands.generate',
            'commands.train',
            'commands.evaluate',
            'commands.sweep',
            'commands.collapse',
        ]

    def add_command(self, command):
        command.register(self.subparsers)
        self.commands[command.name] = command

    def setup(self):
        """Load all command extensions"""
        for extension in self.initial_extensions:
            try:
                module = importlib.import_module(extension)
                module.setup(self)
                logger.debug(f"Loaded extension: {extension}")
            except Exception as e:
                logger.error(f"Failed to load extension {extension}: {e}")
                raise

    def run(self, argv: Optional[List[str]] = None) -> int:
        args = self.parser.parse_args(argv)
        try:
            code = self.commands[args.command].run(args)
            return EXIT_OK if code is None else code
        except ConfigError as e:
            logger.error(f"Configuration error: {e}")
            return EXIT_CONFIG
        except (DataError, CheckpointError, FeatureLookupError, OSError) as e:
            logger.error(f"Data error: {e}")
            return EXIT_DATA


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    configure_logging()
    app = IpaCli()
    app.setup()
    return app.run(argv)


if __name__ == "__main__":
    sys.exit(main())
