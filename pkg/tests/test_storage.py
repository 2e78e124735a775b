import json

import numpy as np
import pandas as pd
import pytest

from app.models.decoding import DecodeStep, DecodeTrace
from app.models.evaluation import AblationRow
from app.storage import (
    REPORT_COLUMNS,
    load_checkpoint,
    read_episodes,
    save_checkpoint,
    verify_artifact,
    write_episodes,
    write_eval_report,
    write_trace,
)
from app.storage.checkpoint import MAGIC, read_header
from app.utils.base import CheckpointError, DatasetError, DecodeStrategy
from app.utils.common import short_hash


def test_checkpoint_round_trip(micro_model, micro_config, tmp_path):
    m = {name: np.full_like(value, 0.5) for name, value in micro_model.predictor.params.items()}
    v = {name: np.full_like(value, 0.25) for name, value in micro_model.predictor.params.items()}
    path = save_checkpoint(
        tmp_path / "a.ckpt", micro_model, micro_config.canonical(), micro_config.seed,
        step=7, epoch=1, moments=(m, v), optimizer_step=7, loss_curve=[(0, 3.4), (1, 3.1)],
    )
    assert path.read_bytes().startswith(MAGIC)
    loaded = load_checkpoint(path)
    assert loaded.header.step == 7 and loaded.header.config_hash == micro_config.config_hash
    assert loaded.header.loss_curve == [[0.0, 3.4], [1.0, 3.1]]
    assert loaded.has_moments
    for name, value in micro_model.predictor.params.items():
        np.testing.assert_array_equal(loaded.model.predictor.params[name], value)
    np.testing.assert_array_equal(loaded.m["head_w"], 0.5)
    np.testing.assert_array_equal(loaded.model.bins.lo, micro_model.bins.lo)
    assert loaded.model.chunk_size == 5 and loaded.model.layout == micro_model.layout


def test_checkpoint_bytes_are_reproducible(micro_model, micro_config, tmp_path):
    first = save_checkpoint(tmp_path / "a.ckpt", micro_model, micro_config.canonical(), 0)
    second = save_checkpoint(tmp_path / "b.ckpt", micro_model, micro_config.canonical(), 0)
    assert first.read_bytes() == second.read_bytes()
    assert not load_checkpoint(first).has_moments


def test_bad_checkpoints_are_rejected(micro_model, micro_config, tmp_path):
    path = save_checkpoint(tmp_path / "a.ckpt", micro_model, micro_config.canonical(), 0)
    data = path.read_bytes()

    (tmp_path / "magic.ckpt").write_bytes(b"NOTACKPT" + data[8:])
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        read_header(tmp_path / "magic.ckpt")
    (tmp_path / "short.ckpt").write_bytes(data[:-4])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(tmp_path / "short.ckpt")
    (tmp_path / "version.ckpt").write_bytes(data[:8] + (2).to_bytes(4, "little") + data[12:])
    with pytest.raises(CheckpointError, match="version"):
        read_header(tmp_path / "version.ckpt")
    (tmp_path / "tiny.ckpt").write_bytes(data[:5])
    with pytest.raises(CheckpointError):
        read_header(tmp_path / "tiny.ckpt")


def test_episodes_round_trip(expert_episodes, tmp_path):
    path = write_episodes(tmp_path / "eps.jsonl", expert_episodes[:3])
    assert read_episodes(path) == expert_episodes[:3]


def test_malformed_episode_names_its_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"task_id": 0, "seed": 1, "obs": [], "actions": [], "success": true}\n{"task_id": \n')
    with pytest.raises(DatasetError, match="bad.jsonl:2"):
        read_episodes(path)


def _rows():
    return [
        AblationRow(suite="had", arm="vanilla", task="all", n=10, successes=4, rate=0.4, ci_lo=0.17, ci_hi=0.69, config_hash="h1"),
        AblationRow(suite="had", arm="hierarchical", task="all", status="failed", error="boom", config_hash="h2"),
    ]


def test_eval_report_schema(tmp_path):
    meta = {"suite": "had", "config": {"seed": 0}, "config_hash": "", "seed": 0}
    meta["config_hash"] = short_hash(meta["config"])
    csv_path, json_path = write_eval_report(tmp_path / "report.csv", _rows(), meta)
    frame = pd.read_csv(csv_path)
    assert list(frame.columns) == REPORT_COLUMNS
    assert pd.isna(frame.loc[1, "rate"]) and frame.loc[0, "n"] == 10
    mirror = json.loads(json_path.read_text())
    assert [row["status"] for row in mirror["rows"]] == ["ok", "failed"]
    assert verify_artifact(csv_path).ok


def _trace() -> DecodeTrace:
    step = DecodeStep(
        step=0, focus_action=None, revealed=[0], remasked=[1], confidence=[[0.5, 0.5]],
        action_scores=[1.0], tokens=[[512, 544]], masked_count=1,
    )
    return DecodeTrace(strategy=DecodeStrategy.VANILLA, steps=[step, step.model_copy(update={"step": 1})])


def test_trace_provenance(tmp_path):
    config = {"seed": 3}
    path, meta_path = write_trace(tmp_path / "t.jsonl", _trace(), {"config": config, "config_hash": short_hash(config), "seed": 3})
    lines = path.read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[0])["config_hash"] == short_hash(config)
    result = verify_artifact(path)
    assert result.ok and result.kind == "trace" and result.seed == 3

    meta = json.loads(meta_path.read_text())
    meta["config"]["seed"] = 4
    meta_path.write_text(json.dumps(meta))
    tampered = verify_artifact(path)
    assert not tampered.ok and "mismatch" in tampered.detail


def test_checkpoint_and_dataset_verification(micro_model, micro_config, tmp_path):
    ckpt = save_checkpoint(tmp_path / "a.ckpt", micro_model, micro_config.canonical(), 0)
    result = verify_artifact(ckpt)
    assert result.ok and result.kind == "checkpoint" and result.config_hash == micro_config.config_hash
    with pytest.raises(DatasetError):
        verify_artifact(tmp_path / "missing.jsonl")
    orphan = tmp_path / "orphan.jsonl"
    orphan.write_text("{}\n")
    with pytest.raises(DatasetError, match="sidecar"):
        verify_artifact(orphan)
