import argparse
import logging
import pathlib
import sys
from typing import List, Optional

from . import config as config_module
from .commands import EXIT_CONFIG, Application, Commands
from .errors import ConfigurationError
from .logger import ArtifactLogHandler

_logger = logging.getLogger(__name__)


def setup_logger(level: str = "INFO") -> ArtifactLogHandler:
    package_logger = logging.getLogger("resonant_cgl")
    package_logger.setLevel(level.upper())
    for handler in list(package_logger.handlers):
        package_logger.removeHandler(handler)
        handler.close()

    artifact_handler = ArtifactLogHandler()
    package_logger.addHandler(artifact_handler)

    stream_handler = logging.StreamHandler(sys.stderr)
    stream_handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    package_logger.addHandler(stream_handler)

    return artifact_handler


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser("resonant-cgl")
    parser.add_argument(
        "command",
        choices=[
            Commands.Resonances,
            Commands.Simulate,
            Commands.Compare,
            Commands.Conserve,
        ],
        help="Subcommand to run.",
    )
    parser.add_argument(
        "--config",
        type=pathlib.Path,
        help="TOML configuration file. The default comparison setup is used when omitted.",
    )
    parser.add_argument(
        "--cache",
        help="Directory for resonance tables (overrides $RESONANT_CGL_CACHE).",
    )
    parser.add_argument("--out", help="Directory receiving the run artifacts.")
    parser.add_argument("--jobs", type=int, help="Number of worker threads.")
    parser.add_argument(
        "--force",
        action="store_true",
        help="Overwrite artifacts written by a different configuration.",
    )
    parser.add_argument(
        "--log-file",
        help="Save NDJSON log records to the given file.",
    )
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Minimum level of emitted log records.",
    )
    return parser


def load_config(args: argparse.Namespace) -> config_module.RunConfig:
    config = config_module.load(args.config)
    overrides = {
        key: value
        for key, value in (("out", args.out), ("cache", args.cache), ("jobs", args.jobs))
        if value is not None
    }
    if not overrides:
        return config
    output = config.output.dict()
    output.update(overrides)
    data = config.dict()
    data["output"] = output
    return config_module.parse(data)


def main(argv: Optional[List[str]] = None) -> None:
    args = build_parser().parse_args(argv)

    log_handler = setup_logger(args.log_level)

    try:
        config = load_config(args)
    except ConfigurationError as e:
        _logger.error(str(e))
        sys.exit(EXIT_CONFIG)

    log_file = pathlib.Path(args.log_file) if args.log_file else None
    application = Application(config, log_handler, force=args.force, log_file=log_file)
    sys.exit(application.run(args.command))


if __name__ == "__main__":
    main()
