import argparse
import logging
from pathlib import Path

from app.commands.router import CommandRouter, argument
from app.storage import verify_artifact

logger = logging.getLogger(__name__)

router = CommandRouter()


@router.command("verify", help="re-hash the config embedded in artifacts")
@argument("paths", type=Path, nargs="+", help="checkpoints, datasets, traces or reports")
def verify(args: argparse.Namespace) -> int:
    failures = 0
    for path in args.paths:
        result = verify_artifact(path)
        status = "ok" if result.ok else "FAIL"
        print(f"{status} {result.kind} {result.path} config {result.config_hash or '-'} seed {result.seed} {result.detail}")
        failures += not result.ok
    if failures:
        logger.warning("%d of %d artifacts failed verification", failures, len(args.paths))
    return 2 if failures else 0
