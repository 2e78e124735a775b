import argparse
import logging
import sys
from typing import Optional, Sequence

from app.commands.common import common_options
from app.commands.decode_trace import router as decode_trace_router
from app.commands.eval import router as eval_router
from app.commands.gen_data import router as gen_data_router
from app.commands.router import CommandRouter
from app.commands.train import router as train_router
from app.commands.verify import router as verify_router
from app.utils.base import CommandError, ConfigError, PolicyError
from app.utils.common.logging import configure_logging
from app.utils.config import settings

logger = logging.getLogger("dvla")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class CliParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; the CLI contract reserves 2 for runtime failures."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


router = CommandRouter()
router.include_router(gen_data_router)
router.include_router(train_router)
router.include_router(eval_router)
router.include_router(decode_trace_router)
router.include_router(verify_router)


def build_parser() -> argparse.ArgumentParser:
    parser = CliParser(prog="dvla", description="Masked discrete diffusion over tokenized action chunks")
    subparsers = parser.add_subparsers(dest="command", required=True, parser_class=CliParser)
    router.mount(subparsers, parents=[common_options()])
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(settings.log_level)
    try:
        return args.handler(args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except CommandError as exc:
        logger.error("%s", exc.detail)
        return exc.exit_code
    except (PolicyError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
