import argparse
import copy
import logging
from pathlib import Path
from typing import Optional

from app.commands.common import progress_enabled, require_file, run_config
from app.commands.router import CommandRouter, argument
from app.services.pipeline import train_policy
from app.services.predictor import ModelState, new_state
from app.storage import load_checkpoint, read_episodes, save_checkpoint, write_loss_curve
from app.utils.base import CheckpointError
from app.utils.common import short_hash

logger = logging.getLogger(__name__)

router = CommandRouter()


def loss_curve_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(f"{checkpoint.stem}.loss.csv")


def budget_free(config: dict) -> str:
    """Config hash ignoring the keys a resumed run may extend (epochs, max_steps)."""
    data = copy.deepcopy(config)
    for key in ("epochs", "max_steps"):
        data.get("train", {}).pop(key, None)
    return short_hash(data)


@router.command("train", help="fit bins and train the mask predictor")
@argument("--data", type=Path, default=None, help="dataset JSONL (default: paths.dataset)")
@argument("--out", type=Path, default=None, help="checkpoint path (default: paths.checkpoint)")
@argument("--resume", type=Path, default=None, help="continue from this checkpoint")
def train(args: argparse.Namespace) -> int:
    config = run_config(args)
    data = require_file(args.data or Path(config.paths.dataset), "dataset")
    out = args.out or Path(config.paths.checkpoint)
    episodes = read_episodes(data)

    state: Optional[ModelState] = None
    if args.resume is not None:
        loaded = load_checkpoint(require_file(args.resume, "checkpoint"))
        if budget_free(loaded.header.config) != budget_free(config.canonical()):
            raise CheckpointError(
                f"{args.resume} was written under config {loaded.header.config_hash}, "
                f"which differs from {config.config_hash} beyond the step budget"
            )
        if not loaded.has_moments:
            raise CheckpointError(f"{args.resume} holds no optimizer state to resume from")
        state = new_state(loaded.model, config.train)
        state.optimizer.load_state(loaded.m, loaded.v, loaded.header.optimizer.get("step", loaded.header.step))
        state.step = loaded.header.step
        state.epoch = loaded.header.epoch
        state.loss_curve = [(int(s), float(l)) for s, l in loaded.header.loss_curve]

    def on_checkpoint(current: ModelState, eval_loss: Optional[float]) -> None:
        save_checkpoint(
            out,
            current.model,
            config.canonical(),
            config.seed,
            step=current.step,
            epoch=current.epoch,
            moments=current.optimizer.state_arrays(),
            optimizer_step=current.optimizer.step_count,
            loss_curve=current.loss_curve,
            eval_loss=eval_loss,
        )

    result = train_policy(config, episodes, state, on_checkpoint, progress_enabled(args))
    curve = write_loss_curve(loss_curve_path(out), result.state.loss_curve)
    held = f"{result.eval_loss:.5f}" if result.eval_loss is not None else "n/a"
    print(f"checkpoint {out} step {result.state.step} loss {result.final_loss:.5f} eval_loss {held} config {config.config_hash}")
    logger.info("Loss curve written to %s", curve)
    return 0
