import json

import pandas as pd
import pytest

from app.storage.checkpoint import read_header
from main import main

MICRO = ["--profile", "micro", "--no-progress"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    data = root / "episodes.jsonl"
    ckpt = root / "policy.ckpt"
    assert main(["gen-data", "--n", "6", "--out", str(data), *MICRO]) == 0
    assert main(["train", "--data", str(data), "--out", str(ckpt), "--set", "train.max_steps=10", *MICRO]) == 0
    return root, data, ckpt


def test_gen_data_writes_summary(workspace, capsys):
    root, data, _ = workspace
    summary = json.loads((root / "episodes.summary.json").read_text())
    assert summary["n_episodes"] == 6 and summary["n_requested"] == 6
    assert main(["gen-data", "--n", "6", "--out", str(root / "again.jsonl"), *MICRO]) == 0
    assert (root / "again.jsonl").read_bytes() == data.read_bytes()
    printed = capsys.readouterr().out
    assert '"n_episodes": 6' in printed


def test_train_writes_checkpoint_and_loss_curve(workspace):
    root, _, ckpt = workspace
    assert ckpt.exists()
    curve = pd.read_csv(root / "policy.loss.csv")
    assert list(curve.columns) == ["step", "loss"] and len(curve) > 0


def test_resume_reproduces_the_uninterrupted_checkpoint(workspace):
    root, data, ckpt = workspace
    half = root / "half.ckpt"
    assert main(["train", "--data", str(data), "--out", str(half), "--set", "train.max_steps=3", *MICRO]) == 0
    assert main([
        "train", "--data", str(data), "--out", str(half), "--resume", str(half),
        "--set", "train.max_steps=10", *MICRO,
    ]) == 0
    assert half.read_bytes() == ckpt.read_bytes()
    resumed_curve = (root / "half.loss.csv").read_bytes()
    assert resumed_curve == (root / "policy.loss.csv").read_bytes()
    assert len(resumed_curve.decode().splitlines()) == read_header(ckpt)[0].step + 1


def test_resume_rejects_a_different_model(workspace):
    root, data, ckpt = workspace
    code = main([
        "train", "--data", str(data), "--out", str(root / "other.ckpt"), "--resume", str(ckpt),
        "--set", "model.embed_dim=16", *MICRO,
    ])
    assert code == 2


def test_eval_baseline_report(workspace):
    root, _, _ = workspace
    out = root / "expert.csv"
    code = main([
        "eval", "--policy", "expert", "--out", str(out),
        "--set", "eval.n_trials=4", "--set", "eval.n_chain_trials=2", *MICRO,
    ])
    assert code == 0
    frame = pd.read_csv(out)
    overall = frame[frame["task"] == "all"].iloc[0]
    assert overall["rate"] == 1.0 and overall["arm"] == "expert"
    assert frame.iloc[-1]["task"] == "chain-2" and frame.iloc[-1]["avg_len"] == 2.0
    assert frame[["ci_lo", "ci_hi"]].notna().all().all()
    chain = frame.iloc[-1]
    assert chain["ci_lo"] <= chain["rate"] <= chain["ci_hi"]
    mirror = json.loads(out.with_suffix(".json").read_text())
    assert mirror["config_hash"] and mirror["suite"] == "eval"


def test_eval_checkpoint_uses_embedded_config(workspace):
    root, _, ckpt = workspace
    out = root / "diffusion.csv"
    code = main([
        "eval", "--ckpt", str(ckpt), "--out", str(out), "--no-progress",
        "--set", "eval.n_trials=2", "--set", "eval.chain_depth=1", "--set", "eval.n_chain_trials=1",
        "--set", "env.tasks=[0]",
    ])
    assert code == 0
    assert set(pd.read_csv(out)["arm"]) == {"hierarchical"}


def test_decode_trace_line_counts(workspace):
    root, _, ckpt = workspace
    hierarchical = root / "h.jsonl"
    assert main(["decode-trace", "--ckpt", str(ckpt), "--seed", "3", "--strategy", "hierarchical", "--out", str(hierarchical)]) == 0
    lines = [json.loads(line) for line in hierarchical.read_text().splitlines()]
    assert len(lines) == 5 * 2
    assert all(line["seed"] == 3 and line["strategy"] == "hierarchical" for line in lines)

    vanilla = root / "v.jsonl"
    code = main([
        "decode-trace", "--ckpt", str(ckpt), "--seed", "3", "--out", str(vanilla),
        "--set", "decode.strategy=vanilla", "--set", "decode.total_steps=7",
    ])
    assert code == 0
    counts = [json.loads(line)["masked_count"] for line in vanilla.read_text().splitlines()]
    assert len(counts) == 7
    assert counts == sorted(counts, reverse=True) and counts[-1] == 0


def test_verify_artifacts(workspace, capsys):
    root, data, ckpt = workspace
    trace = root / "verify.jsonl"
    assert main(["decode-trace", "--ckpt", str(ckpt), "--out", str(trace)]) == 0
    assert main(["verify", str(data), str(ckpt), str(trace)]) == 0
    assert capsys.readouterr().out.count("ok ") >= 3

    meta_path = root / "verify.meta.json"
    meta = json.loads(meta_path.read_text())
    meta["config"]["seed"] = 99
    meta_path.write_text(json.dumps(meta))
    assert main(["verify", str(trace)]) == 2


def test_usage_errors_exit_one(workspace):
    _, data, _ = workspace
    for argv in ([], ["train", "--bogus"], ["eval", "--suite", "nope"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1
    assert main(["gen-data", "--set", "train.epcohs=1", "--out", str(data.with_name("x.jsonl"))]) == 1


def test_runtime_failures_exit_two(workspace):
    root, _, _ = workspace
    assert main(["train", "--data", str(root / "missing.jsonl"), *MICRO]) == 2
    broken = root / "broken.ckpt"
    broken.write_bytes(b"garbage")
    assert main(["decode-trace", "--ckpt", str(broken)]) == 2
    assert main(["verify", str(root / "missing.jsonl")]) == 2


def test_eval_reports_repeat_byte_for_byte(workspace):
    root, _, ckpt = workspace
    argv = [
        "eval", "--ckpt", str(ckpt), "--no-progress",
        "--set", "eval.n_trials=2", "--set", "eval.n_chain_trials=1", "--set", "env.tasks=[0, 1]",
    ]
    first, second = root / "repeat-a.csv", root / "repeat-b.csv"
    assert main([*argv, "--out", str(first)]) == 0
    assert main([*argv, "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()
    first_mirror = json.loads(first.with_suffix(".json").read_text())
    second_mirror = json.loads(second.with_suffix(".json").read_text())
    assert first_mirror["csv_sha256"] == second_mirror["csv_sha256"]
    assert pd.read_csv(first)["decode_ms_mean"].isna().all()
    timings = pd.read_csv(root / "repeat-a.timings.csv")
    assert list(timings.columns) == ["suite", "arm", "task", "decode_ms_mean"]
    assert (timings["decode_ms_mean"] > 0).all()


def test_bad_task_and_count_exit_one(workspace):
    root, _, ckpt = workspace
    assert main(["decode-trace", "--ckpt", str(ckpt), "--task", "99", "--out", str(root / "bad.jsonl")]) == 1
    assert main(["gen-data", "--n", "0", "--out", str(root / "none.jsonl"), *MICRO]) == 1
