from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

from app.models.evaluation import AblationRow, EvalReport
from app.models.world import EpisodeRecord
from app.services.evaluation import evaluate, wilson_interval
from app.services.pipeline import diffusion_policy, rollout_config, train_policy
from app.services.predictor import PolicyModel
from app.utils.base import AblationSuite, DecodeStrategy, HeadMode
from app.utils.common import short_hash
from app.utils.config import RunConfig

logger = logging.getLogger(__name__)

# Config keys each suite is allowed to vary between arms.
VARIED_KEYS: dict[AblationSuite, list[tuple[str, str]]] = {
    AblationSuite.LSC: [("model", "head")],
    AblationSuite.HAD: [("decode", "strategy"), ("decode", "total_steps")],
    AblationSuite.CHUNK: [("tokenizer", "chunk_size"), ("decode", "total_steps")],
}


@dataclass
class Arm:
    name: str
    config: RunConfig
    model: Optional[PolicyModel] = None


@dataclass
class AblationResult:
    suite: AblationSuite
    rows: list[AblationRow]
    meta: dict[str, Any] = field(default_factory=dict)


def arms_for(suite: AblationSuite, base: RunConfig) -> list[Arm]:
    budget = base.tokenizer.chunk_size * base.decode.iters_per_action
    if suite is AblationSuite.LSC:
        # Heads are compared under vanilla decoding at the hierarchical step budget.
        decode = {"strategy": DecodeStrategy.VANILLA.value, "total_steps": budget}
        return [Arm(head.value, base.derive({"model": {"head": head.value}, "decode": decode})) for head in HeadMode]
    if suite is AblationSuite.HAD:
        return [
            Arm(strategy.value, base.derive({"decode": {"strategy": strategy.value, "total_steps": budget}}))
            for strategy in DecodeStrategy
        ]
    return [
        Arm(
            f"K={k}",
            base.derive({"tokenizer": {"chunk_size": k}, "decode": {"total_steps": k * base.decode.iters_per_action}}),
        )
        for k in base.eval.chunk_sizes
    ]


def shared_hash(config: RunConfig, suite: AblationSuite) -> str:
    """Hash of the config with the suite's varied keys removed."""
    data = copy.deepcopy(config.canonical())
    for section, key in VARIED_KEYS[suite]:
        data[section].pop(key, None)
    return short_hash(data)


def report_rows(suite: str, arm: str, report: EvalReport, config_hash: str) -> list[AblationRow]:
    rows = [
        AblationRow(
            suite=suite, arm=arm, task=result.task, n=result.n, successes=result.successes,
            rate=result.rate, ci_lo=result.ci_lo, ci_hi=result.ci_hi, decode_ms_mean=result.decode_ms_mean,
            config_hash=config_hash,
        )
        for result in report.tasks
    ]
    if report.chain is not None:
        chain = report.chain
        completed = chain.histogram[-1]
        lo, hi = wilson_interval(completed, chain.n)
        rows.append(AblationRow(
            suite=suite, arm=arm, task=f"chain-{chain.chain_length}", n=chain.n, successes=completed,
            rate=completed / chain.n, ci_lo=lo, ci_hi=hi, avg_len=chain.avg_len, decode_ms_mean=chain.decode_ms_mean,
            config_hash=config_hash,
        ))
    return rows


def run_ablation(
    suite: AblationSuite,
    base: RunConfig,
    episodes: Sequence[EpisodeRecord],
    model: Optional[PolicyModel] = None,
    progress: bool = True,
    trainer: Callable[..., Any] = train_policy,
) -> AblationResult:
    """Train/evaluate every arm of a suite; a failing arm yields a failed row and the suite continues.

    The had suite decodes one shared model (given, or trained once from the base config).
    """
    arms = arms_for(suite, base)
    rows: list[AblationRow] = []
    arm_meta: dict[str, dict[str, Any]] = {}
    shared_model = model

    for arm in arms:
        config_hash = arm.config.config_hash
        try:
            if suite is AblationSuite.HAD:
                if shared_model is None:
                    shared_model = trainer(base, episodes, progress=progress).state.model
                arm_model = shared_model
            else:
                arm_model = trainer(arm.config, episodes, progress=progress).state.model
            policy = diffusion_policy(arm.config, arm_model, arm.name)
            report = evaluate(
                policy,
                rollout_config(arm.config),
                arm.config.env.tasks,
                arm.config.eval.chain_depth,
                arm.config.eval.n_chain_trials,
                config_hash,
                progress,
            )
            rows.extend(report_rows(suite.value, arm.name, report, config_hash))
            overall = report.tasks[-1]
            arm_meta[arm.name] = {"status": "ok", "config_hash": config_hash, "rate": overall.rate}
        except Exception as exc:  # noqa: BLE001
            logger.exception("Arm %s of suite %s failed", arm.name, suite.value)
            rows.append(AblationRow(
                suite=suite.value, arm=arm.name, task="all", status="failed", error=str(exc), config_hash=config_hash,
            ))
            arm_meta[arm.name] = {"status": "failed", "config_hash": config_hash, "error": str(exc)}

    shared = {arm.name: shared_hash(arm.config, suite) for arm in arms}
    ok = {name: meta for name, meta in arm_meta.items() if meta["status"] == "ok"}
    best = max(ok, key=lambda name: ok[name]["rate"]) if ok else None
    meta = {
        "suite": suite.value,
        "config": base.canonical(),
        "config_hash": base.config_hash,
        "seed": base.seed,
        "arms": arm_meta,
        "shared_config_hash": shared,
        "controlled": len(set(shared.values())) == 1,
        "best_arm": best,
    }
    logger.info("Suite %s done: best arm %s, controlled=%s", suite.value, best, meta["controlled"])
    return AblationResult(suite=suite, rows=rows, meta=meta)
