import argparse
import logging
from pathlib import Path
from typing import Optional

from app.commands.common import require_file, run_config
from app.commands.router import CommandRouter, argument
from app.models.predictor import ConditioningInput
from app.services.decoder import decode
from app.simulation import reset
from app.storage import load_checkpoint, write_trace
from app.storage.checkpoint import read_header
from app.utils.base import DecodeStrategy
from app.utils.common import make_rng

logger = logging.getLogger(__name__)

router = CommandRouter()


@router.command("decode-trace", help="dump every step of one decode as JSONL")
@argument("--ckpt", type=Path, required=True, help="checkpoint to decode with")
@argument("--seed", type=int, default=None, help="scene and decode seed (default: the config seed)")
@argument("--strategy", choices=DecodeStrategy.values(), default=None, help="override decode.strategy")
@argument("--task", type=int, default=None, help="task id (default: drawn by the scene seed)")
@argument("--out", type=Path, default=None, help="trace path (default: <report_dir>/trace-<strategy>-<seed>.jsonl)")
def decode_trace(args: argparse.Namespace) -> int:
    ckpt = require_file(args.ckpt, "checkpoint")
    header, _ = read_header(ckpt)
    config = run_config(args, header.config)

    updates: dict = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    strategy = DecodeStrategy(args.strategy) if args.strategy else config.decode.strategy
    decode_updates: dict = {"strategy": strategy.value}
    if strategy is DecodeStrategy.HIERARCHICAL:
        decode_updates["total_steps"] = config.tokenizer.chunk_size * config.decode.iters_per_action
    updates["decode"] = decode_updates
    config = config.derive(updates)
    seed = config.seed

    model = load_checkpoint(ckpt).model
    _, task, obs = reset(seed, config.env.tasks, args.task)
    cond = ConditioningInput(observation=obs, task_id=task.task_id)
    result = decode(cond, model, config.decode.model_copy(update={"seed": seed}), make_rng(seed, "decode"))

    out: Optional[Path] = args.out or Path(config.paths.report_dir) / f"trace-{strategy.value}-{seed}.jsonl"
    meta = {
        "config": config.canonical(),
        "config_hash": config.config_hash,
        "seed": seed,
        "strategy": strategy.value,
        "task_id": task.task_id,
        "checkpoint": str(ckpt),
    }
    path, _ = write_trace(out, result.trace, meta)
    logger.info("Decoded task %d (%s) in %d steps", task.task_id, task.template, len(result.trace.steps))
    print(f"trace {path} steps {len(result.trace.steps)} strategy {strategy.value} config {config.config_hash}")
    return 0
