"""Command-line entry point of the homogenization laboratory."""
import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

from commands import cell_commands, check_commands, fine_commands, limit_commands
from commands.context import CommandContext
from commands.exit_codes import EXIT_CONFIG, _report_failure
from config.run_config import defaults_text, parse_config
from config.settings import LOG_LEVELS, get_settings
from errors import HomogenizationLabError

# Load environment variables
load_dotenv()

logger = logging.getLogger("homlab")

# Register command groups
COMMAND_GROUPS = (cell_commands, limit_commands, fine_commands, check_commands)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homlab",
        description="Periodic homogenization laboratory for high-contrast elasticity.",
        epilog="Configuration keys and their defaults:\n\n" + defaults_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", type=Path, default=None, help="INI run configuration")
    parser.add_argument("--out", type=Path, default=None, help="output directory (env HOMLAB_OUT_DIR)")
    parser.add_argument("--deterministic", action="store_true", help="single worker, no timing fields")
    parser.add_argument("--workers", type=int, default=None, help="worker threads for independent solves")
    parser.add_argument("--log-level", choices=sorted(LOG_LEVELS), default=None)
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")
    subparsers.required = True
    for group in COMMAND_GROUPS:
        group.register(subparsers)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings(log_level=args.log_level, workers=args.workers,
                            deterministic=True if args.deterministic else None,
                            out_dir=str(args.out) if args.out else None)
    logging.basicConfig(level=LOG_LEVELS[settings.log_level],
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    try:
        config = parse_config(args.config)
    except HomogenizationLabError as e:
        logger.error("configuration rejected: %s", e)
        return _report_failure(e, "config", EXIT_CONFIG)

    workers = args.workers if args.workers is not None else max(config.solver.workers, settings.workers)
    deterministic = settings.deterministic or config.solver.deterministic
    ctx = CommandContext(config, settings, Path(settings.out_dir))
    ctx = ctx.with_solver(workers=max(1, workers), deterministic=deterministic)
    logger.debug("running %s into %s (workers=%d, deterministic=%s)", args.command, ctx.out, ctx.workers,
                 ctx.deterministic)
    return args.handler(args, ctx)


if __name__ == '__main__':
    sys.exit(main())
