import argparse
import json
import logging
from pathlib import Path

from app.commands.common import progress_enabled, run_config
from app.commands.router import CommandRouter, argument
from app.simulation.dataset import generate_dataset

logger = logging.getLogger(__name__)

router = CommandRouter()


@router.command("gen-data", help="generate expert demonstrations as JSONL")
@argument("--out", type=Path, default=None, help="dataset path (default: paths.dataset)")
@argument("--n", type=int, default=None, help="number of episodes (default: env.n_episodes)")
def gen_data(args: argparse.Namespace) -> int:
    config = run_config(args)
    n_episodes = args.n if args.n is not None else config.env.n_episodes
    out = args.out or Path(config.paths.dataset)
    summary = generate_dataset(
        n_episodes,
        config.seed,
        out,
        horizon=config.env.horizon,
        tasks=config.env.tasks,
        config=config.canonical(),
        config_hash=config.config_hash,
        progress=progress_enabled(args),
    )
    print(json.dumps(summary.to_dict(exclude=["config"]), indent=2, sort_keys=True))
    return 0
