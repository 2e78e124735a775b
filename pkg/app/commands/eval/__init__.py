import argparse
import logging
from pathlib import Path
from typing import Optional

from app.commands.common import progress_enabled, require_file, run_config
from app.commands.router import CommandRouter, argument
from app.services.ablation import report_rows, run_ablation
from app.services.evaluation import ExpertPolicy, RandomPolicy, evaluate
from app.services.pipeline import diffusion_policy, rollout_config
from app.storage import load_checkpoint, read_episodes, write_eval_report
from app.storage.checkpoint import read_header
from app.utils.base import AblationSuite

logger = logging.getLogger(__name__)

router = CommandRouter()

BASELINES = {"expert": ExpertPolicy, "random": RandomPolicy}


@router.command("eval", help="closed-loop evaluation or an ablation suite")
@argument("--ckpt", type=Path, default=None, help="checkpoint to evaluate (default: paths.checkpoint)")
@argument("--suite", choices=AblationSuite.values(), default=None, help="run an ablation suite instead")
@argument("--policy", choices=["diffusion", *BASELINES], default="diffusion", help="policy to evaluate")
@argument("--data", type=Path, default=None, help="dataset for suites that train (default: paths.dataset)")
@argument("--out", type=Path, default=None, help="report CSV path (default: <report_dir>/<name>.csv)")
def evaluate_command(args: argparse.Namespace) -> int:
    ckpt: Optional[Path] = args.ckpt
    embedded: Optional[dict] = None
    if ckpt is not None:
        embedded = read_header(require_file(ckpt, "checkpoint"))[0].config
    config = run_config(args, embedded)
    progress = progress_enabled(args)

    if args.suite is not None:
        suite = AblationSuite(args.suite)
        model = None
        if suite is AblationSuite.HAD and ckpt is not None:
            model = load_checkpoint(ckpt).model
        episodes = []
        if model is None:
            episodes = read_episodes(require_file(args.data or Path(config.paths.dataset), "dataset"))
        result = run_ablation(suite, config, episodes, model, progress)
        out = args.out or Path(config.paths.report_dir) / f"ablation-{suite.value}.csv"
        csv_path, _ = write_eval_report(out, result.rows, result.meta, config.eval.timings_in_report)
        print(f"report {csv_path} best_arm {result.meta['best_arm']} config {config.config_hash}")
        return 0 if any(row.status == "ok" for row in result.rows) else 2

    if args.policy == "diffusion":
        if ckpt is None:
            ckpt = require_file(Path(config.paths.checkpoint), "checkpoint")
        policy = diffusion_policy(config, load_checkpoint(ckpt).model)
    else:
        policy = BASELINES[args.policy]()
    report = evaluate(
        policy,
        rollout_config(config),
        config.env.tasks,
        config.eval.chain_depth,
        config.eval.n_chain_trials,
        config.config_hash,
        progress,
    )
    rows = report_rows("eval", policy.name, report, config.config_hash)
    meta = {
        "suite": "eval",
        "policy": policy.name,
        "checkpoint": str(ckpt) if ckpt else None,
        "config": config.canonical(),
        "config_hash": config.config_hash,
        "seed": config.seed,
    }
    out = args.out or Path(config.paths.report_dir) / f"eval-{policy.name}.csv"
    csv_path, _ = write_eval_report(out, rows, meta, config.eval.timings_in_report)
    overall = report.tasks[-1]
    print(f"report {csv_path} success {overall.rate:.3f} [{overall.ci_lo:.3f}, {overall.ci_hi:.3f}] config {config.config_hash}")
    return 0
