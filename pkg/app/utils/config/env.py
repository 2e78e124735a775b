from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.models.decoding import DecodeConfig
from app.models.vocab import ACTION_DIM
from app.utils.base import (
    ChunkExecution,
    ConfigError,
    DecodeStrategy,
    HeadMode,
    LossWeighting,
)
from app.utils.common.hashing import canonical_json, short_hash
from app.utils.config.profiles import PROFILES


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsSection(Section):
    dataset: str = "data/episodes.jsonl"
    checkpoint: str = "runs/policy.ckpt"
    report_dir: str = "reports"


class TokenizerSection(Section):
    base_vocab_size: int = Field(default=512, gt=0)
    action_vocab_size: int = Field(default=32, gt=0)
    clip_percentile: float = Field(default=1.0, ge=0.0, lt=50.0)
    chunk_size: int = Field(default=5, ge=1)


class ModelSection(Section):
    embed_dim: int = 128
    layers: int = 4
    heads: int = 4
    mlp_ratio: int = 4
    prompt_len: int = Field(default=4, ge=2)
    head: HeadMode = HeadMode.LOCALIZED
    init_std: float = 0.02


class DiffusionSection(Section):
    """Training-time noise settings; the reverse step count T is `decode.total_steps`."""
    loss_weighting: LossWeighting = LossWeighting.INVERSE_T
    t_min: float = Field(default=0.05, gt=0.0, le=1.0)


class TrainSection(Section):
    learning_rate: float = Field(default=3e-4, gt=0)
    batch_size: int = Field(default=64, ge=1)
    epochs: int = Field(default=3, ge=1)
    max_steps: Optional[int] = None
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    grad_clip: float = 1.0
    checkpoint_every: int = Field(default=500, ge=1)
    log_every: int = Field(default=50, ge=1)
    eval_fraction: float = Field(default=0.05, ge=0.0, lt=1.0)


class EnvSection(Section):
    n_episodes: int = Field(default=2000, ge=1)
    horizon: int = Field(default=60, ge=1)
    tasks: Optional[list[int]] = None


class EvalSection(Section):
    n_trials: int = Field(default=200, ge=1)
    chunk_execution: ChunkExecution = ChunkExecution.FULL
    m: int = Field(default=1, ge=1)
    horizon_limit: int = Field(default=60, ge=1)
    chain_depth: int = Field(default=2, ge=1)
    n_chain_trials: int = Field(default=200, ge=1)
    chunk_sizes: list[int] = Field(default_factory=lambda: [3, 5, 8, 10])
    timings_in_report: bool = False


class RunConfig(BaseSettings):
    """Every knob of a run. Its canonical JSON form is hashed into every artifact."""
    app_name: str = "diffusion-action-policy"
    seed: int = 0
    log_level: str = "INFO"

    paths: PathsSection = Field(default_factory=PathsSection)
    tokenizer: TokenizerSection = Field(default_factory=TokenizerSection)
    model: ModelSection = Field(default_factory=ModelSection)
    diffusion: DiffusionSection = Field(default_factory=DiffusionSection)
    train: TrainSection = Field(default_factory=TrainSection)
    decode: DecodeConfig = Field(default_factory=DecodeConfig)
    env: EnvSection = Field(default_factory=EnvSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    model_config = SettingsConfigDict(
        env_prefix="DVLA_",
        env_nested_delimiter="__",
        env_file=(".env",),
        extra="forbid",
        case_sensitive=False,
    )

    @model_validator(mode="after")
    def _cross_check(self) -> "RunConfig":
        if self.decode.strategy is DecodeStrategy.HIERARCHICAL:
            expected = self.tokenizer.chunk_size * self.decode.iters_per_action
            if self.decode.iters_per_action > ACTION_DIM:
                raise ValueError(f"iters_per_action {self.decode.iters_per_action} exceeds the {ACTION_DIM} tokens of an action")
            if self.decode.total_steps != expected:
                raise ValueError(
                    f"hierarchical decode needs total_steps = chunk_size * iters_per_action = {expected}, "
                    f"got {self.decode.total_steps}"
                )
        if self.eval.chunk_execution is ChunkExecution.FIRST_M and self.eval.m > self.tokenizer.chunk_size:
            raise ValueError(f"eval.m = {self.eval.m} exceeds chunk_size {self.tokenizer.chunk_size}")
        if self.model.embed_dim % self.model.heads != 0:
            raise ValueError(f"embed_dim {self.model.embed_dim} not divisible by heads {self.model.heads}")
        return self

    def canonical(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def canonical_json(self) -> str:
        return canonical_json(self.canonical())

    @property
    def config_hash(self) -> str:
        return short_hash(self.canonical())

    def derive(self, updates: dict[str, Any]) -> "RunConfig":
        """A new config with nested updates folded in and re-validated."""
        return build_config(deep_merge(self.canonical(), updates))


def deep_merge(base: dict[str, Any], updates: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in updates.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def parse_override(text: str) -> dict[str, Any]:
    """Turn "section.key=value" into a nested dict; the value is read as a TOML literal when possible."""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    node: dict[str, Any] = {}
    cursor = node
    parts = dotted.strip().split(".")
    for part in parts[:-1]:
        cursor = cursor.setdefault(part, {})
    cursor[parts[-1]] = value
    return node


def build_config(data: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig(**data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    profile: str | None = None,
) -> RunConfig:
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return layer_config(data, overrides, profile)


def layer_config(
    data: dict[str, Any],
    overrides: list[str] | None = None,
    profile: str | None = None,
) -> RunConfig:
    """Fold a named profile and then --set overrides over a base mapping."""
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}; known: {sorted(PROFILES)}")
        data = deep_merge(data, PROFILES[profile])
    for item in overrides or []:
        data = deep_merge(data, parse_override(item))
    return build_config(data)


settings = RunConfig()
