from __future__ import annotations

import argparse
from pathlib import Path
from typing import Any, Optional

from app.utils.base import CommandError
from app.utils.config import RunConfig, layer_config, load_config


def common_options() -> argparse.ArgumentParser:
    """Options shared by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--config", type=Path, default=None, help="TOML run configuration")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    parser.add_argument("--profile", default=None, help="named preset, e.g. micro")
    parser.add_argument("--no-progress", action="store_true", help="disable progress bars")
    return parser


def run_config(args: argparse.Namespace, embedded: Optional[dict[str, Any]] = None) -> RunConfig:
    """Config file, or a config embedded in an artifact when no file is given, then profile and overrides."""
    if embedded is not None and args.config is None:
        return layer_config(dict(embedded), args.overrides, args.profile)
    return load_config(args.config, args.overrides, args.profile)


def require_file(path: Path, what: str) -> Path:
    if not Path(path).is_file():
        raise CommandError(2, f"{what} {path} does not exist")
    return Path(path)


def progress_enabled(args: argparse.Namespace) -> bool:
    return not getattr(args, "no_progress", False)
