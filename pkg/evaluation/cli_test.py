"""
Rarefy — Command Line Tests
Exit codes and the artifacts each subcommand leaves behind.
"""

import json
import os
import sys

import pandas as pd
import pytest

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from app import main
from config.settings import (
    ABLATION_CSV_NAME,
    CHECKPOINT_NAME,
    EVAL_CSV_NAME,
    EXIT_OK,
    EXIT_USAGE,
    RUN_CONFIG_NAME,
    STAGE_METRICS_NAME,
    STAGE_TIMING_NAME,
    TRANSCRIPT_NAME,
)
from audit.transcript_logger import transcript_stats


def tiny_run(outdir, *extra, seed="1"):
    seed_flags = ["--seed", seed] if seed else []
    return [
        "--schema", "toy-8", "--target", "synthetic-amp", "--k", "3", "--T", "10",
        "--B", "40", "--S", "2", "--iterations", "2", "--batch", "16", "--latent-dim", "4",
        "--hidden", "8", "--candidate-pool", "120", "--eval-n", "200", *seed_flags,
        "--outdir", str(outdir), *extra,
    ]


# ─────────────────────────────────────────────────────────────
# train / eval
# ─────────────────────────────────────────────────────────────

def test_train_then_eval(tmp_path, capsys):
    assert main(["train", *tiny_run(tmp_path)]) == EXIT_OK
    for name in (CHECKPOINT_NAME, RUN_CONFIG_NAME, STAGE_METRICS_NAME, TRANSCRIPT_NAME):
        assert (tmp_path / name).exists(), name
    stats = transcript_stats(tmp_path / TRANSCRIPT_NAME)
    assert stats["consistent"] and stats["final_spent"] == 40
    out = capsys.readouterr().out
    assert "spent 40/40 labels" in out and "peak RSS" in out

    assert main(["eval", *tiny_run(tmp_path), "--n", "300"]) == EXIT_OK
    row = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert row["n"] == 300 and row["seed"] == 1
    assert 0.0 <= row["diversity"] <= row["n_rare"] / 300
    assert len(pd.read_csv(tmp_path / EVAL_CSV_NAME)) == 1


def test_retraining_replaces_the_transcript(tmp_path):
    assert main(["train", *tiny_run(tmp_path)]) == EXIT_OK
    assert main(["train", *tiny_run(tmp_path)]) == EXIT_OK
    assert transcript_stats(tmp_path / TRANSCRIPT_NAME)["charged"] == 40


def test_identical_runs_write_identical_artifacts(tmp_path):
    names = (CHECKPOINT_NAME, RUN_CONFIG_NAME, STAGE_METRICS_NAME, TRANSCRIPT_NAME)
    assert main(["train", *tiny_run(tmp_path)]) == EXIT_OK
    first = {name: (tmp_path / name).read_bytes() for name in names}
    assert main(["train", *tiny_run(tmp_path)]) == EXIT_OK
    for name in names:
        assert (tmp_path / name).read_bytes() == first[name], name
    assert (tmp_path / STAGE_TIMING_NAME).exists()


def test_oversized_weight_still_trains(tmp_path):
    with pytest.warns(RuntimeWarning):
        assert main(["train", *tiny_run(tmp_path, "--w", "25")]) == EXIT_OK


def test_eval_rejects_zero_samples(tmp_path, capsys):
    assert main(["eval", *tiny_run(tmp_path), "--n", "0"]) == EXIT_USAGE
    assert "--n" in capsys.readouterr().err


def test_eval_without_checkpoint(tmp_path):
    assert main(["eval", *tiny_run(tmp_path), "--n", "10"]) == EXIT_USAGE


# ─────────────────────────────────────────────────────────────
# Usage errors
# ─────────────────────────────────────────────────────────────

def test_missing_schema_file(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert main(["train", "--schema", str(missing), "--outdir", str(tmp_path)]) == EXIT_USAGE
    assert "nowhere.json" in capsys.readouterr().err


def test_bad_flags():
    assert main(["train", "--B", "many"]) == EXIT_USAGE
    assert main(["explode"]) == EXIT_USAGE
    assert main([]) == EXIT_USAGE
    assert main(["--help"]) == EXIT_OK


def test_invalid_budget_split(tmp_path):
    assert main(["train", *tiny_run(tmp_path, "--B", "1", "--S", "2")]) == EXIT_USAGE


def test_config_file_with_overrides(tmp_path):
    config = tmp_path / "run.json"
    config.write_text(json.dumps({"schema": "toy-8", "gate": 3, "budget": 40, "iterations": 1}))
    assert main(["train", "--config", str(config), "--S", "2", "--batch", "8", "--latent-dim", "4",
                 "--hidden", "8", "--candidate-pool", "60", "--outdir", str(tmp_path)]) == EXIT_OK
    saved = json.loads((tmp_path / RUN_CONFIG_NAME).read_text())
    assert saved["schema"] == "toy-8" and saved["stages"] == 2 and saved["budget"] == 40

    config.write_text(json.dumps({"schema": "toy-8", "budgte": 40}))
    assert main(["train", "--config", str(config), "--outdir", str(tmp_path)]) == EXIT_USAGE


def test_shipped_example_config(tmp_path):
    example = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
                           "data", "configs", "default_run.json")
    assert main(["train", "--config", example, "--schema", "toy-8", "--k", "3", "--B", "40",
                 "--iterations", "1", "--batch", "8", "--latent-dim", "4", "--hidden", "8",
                 "--candidate-pool", "60", "--outdir", str(tmp_path)]) == EXIT_OK
    saved = json.loads((tmp_path / RUN_CONFIG_NAME).read_text())
    assert saved["lipschitz"] == "gradient-penalty" and saved["weight"] == 3.0
    assert saved["schema"] == "toy-8" and saved["budget"] == 40


# ─────────────────────────────────────────────────────────────
# ground-truth / verify / ablate
# ─────────────────────────────────────────────────────────────

def test_ground_truth_toy(tmp_path, capsys):
    assert main(["ground-truth", "--schema", "toy-12", "--T", "10", "--outdir", str(tmp_path)]) == EXIT_OK
    assert "α = 0.0078125" in capsys.readouterr().out
    payload = json.loads((tmp_path / "ground_truth.json").read_text())
    assert payload["alpha"] == 0.0078125 and payload["exact"]
    assert len((tmp_path / "rare_packets.txt").read_text().splitlines()) == 32


def test_ground_truth_sampled(tmp_path):
    assert main(["ground-truth", "--schema", "toy-12", "--T", "10", "--sample", "5000",
                 "--outdir", str(tmp_path)]) == EXIT_OK
    assert not json.loads((tmp_path / "ground_truth.json").read_text())["exact"]


def test_ground_truth_refuses_huge_spaces(tmp_path, capsys):
    assert main(["ground-truth", "--schema", "dns", "--outdir", str(tmp_path)]) == EXIT_USAGE
    assert "cap" in capsys.readouterr().err


def test_verify(capsys):
    assert main(["verify", "--instances", "5", "--support", "6"]) == EXIT_OK
    assert "5/5 instances passed" in capsys.readouterr().out
    assert main(["verify", "--support", "1"]) == EXIT_USAGE


def test_ablate_writes_rows_and_summary(tmp_path):
    code = main(["ablate", *tiny_run(tmp_path, seed=None), "--components", "NULL,UAW", "--seeds", "1,2",
                 "--eval-n", "100"])
    assert code == EXIT_OK
    frame = pd.read_csv(tmp_path / ABLATION_CSV_NAME)
    assert list(frame["component"]) == ["base", "base", "UAW", "UAW"]
    summary = pd.read_csv(tmp_path / "ablation_summary.csv")
    assert list(summary["component"]) == ["base", "UAW"]
    assert list(summary["runs"]) == [2, 2]
