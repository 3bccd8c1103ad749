"""Directional training check plus the external file contracts.

The copy-task corpus makes evidence decisive: targets are two words quoted
verbatim in the evidence passage and absent from the fixed context, so a
model that reads evidence can beat the no-evidence baseline's marginal fit.
Budgets (base, window, epochs, batch size, learning rate, seed) are pinned
identically for both runs; only the export contents differ.
"""
import contextlib
import io
import json
import math

import pytest

pytest.importorskip("evtrainer")

from evtrainer.cli import main

from toy_exports import copy_task_records, write_export


def run_cli(argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main(argv)
    return code, out.getvalue(), err.getvalue()


def error_obj(err_text):
    lines = [line for line in err_text.splitlines() if line.strip()]
    return json.loads(lines[-1])


BUDGET = [
    "--mode", "fid", "--seed", "7", "--base", "tiny", "--max-input-len", "32",
    "--epochs", "8", "--batch-size", "16", "--lr", "3e-4",
]


@pytest.mark.acceptance("directional check: evidence-aware fid ppl < no-evidence baseline")
def test_evidence_model_beats_no_evidence_baseline(tmp_path):
    ppl = {}
    for tag, with_evidence in (("evidence", True), ("baseline", False)):
        train_path = write_export(
            tmp_path / f"train.{tag}.jsonl", copy_task_records(500, 11, "fid", with_evidence)
        )
        test_path = write_export(
            tmp_path / f"test.{tag}.jsonl", copy_task_records(100, 12, "fid", with_evidence)
        )
        run_dir = tmp_path / f"run.{tag}"
        code, _, err = run_cli(
            ["train", "--export", str(train_path), "--out-dir", str(run_dir), *BUDGET]
        )
        assert code == 0, err
        ppl_path = tmp_path / f"ppl.{tag}.json"
        code, out, err = run_cli([
            "ppl", "--checkpoint", str(run_dir / "checkpoint.pt"),
            "--export", str(test_path), "--output", str(ppl_path),
        ])
        assert code == 0, err
        payload = json.loads(ppl_path.read_text(encoding="utf-8"))
        assert set(payload) == {"ppl"}
        assert isinstance(payload["ppl"], float) and math.isfinite(payload["ppl"])
        assert json.loads(out.strip()) == payload
        ppl[tag] = payload["ppl"]
    # both runs saw identical targets, so the perplexities are comparable
    assert 1.0 < ppl["evidence"]
    assert ppl["evidence"] < ppl["baseline"]


def test_decode_cli_emits_id_hyp_jsonl(tmp_path):
    records = copy_task_records(12, 4, "fid")
    train_path = write_export(tmp_path / "train.jsonl", records)
    run_dir = tmp_path / "run"
    code, _, err = run_cli([
        "train", "--export", str(train_path), "--out-dir", str(run_dir),
        "--mode", "fid", "--seed", "3", "--epochs", "1",
    ])
    assert code == 0, err
    hyps_path = tmp_path / "hyps.jsonl"
    code, out, err = run_cli([
        "decode", "--checkpoint", str(run_dir / "checkpoint.pt"),
        "--export", str(train_path), "--output", str(hyps_path),
        "--max-new-tokens", "6",
    ])
    assert code == 0, err
    assert "12 hypotheses" in out
    rows = [json.loads(line) for line in hyps_path.read_text(encoding="utf-8").splitlines()]
    assert [row["id"] for row in rows] == [rec["id"] for rec in records]
    assert all(set(row) == {"id", "hyp"} and isinstance(row["hyp"], str) for row in rows)


def test_train_cli_reports_losses_and_artifacts(tmp_path):
    train_path = write_export(tmp_path / "train.jsonl", copy_task_records(16, 6, "gpt_concat"))
    run_dir = tmp_path / "run"
    code, out, err = run_cli([
        "train", "--export", str(train_path), "--out-dir", str(run_dir),
        "--mode", "gpt_concat", "--seed", "1", "--epochs", "2", "--batch-size", "8",
    ])
    assert code == 0, err
    assert "16 examples" in out
    assert (run_dir / "checkpoint.pt").exists()
    assert (run_dir / "training_log.json").exists()


def test_cli_missing_export_exits_two(tmp_path):
    code, _, err = run_cli([
        "train", "--export", str(tmp_path / "none.jsonl"),
        "--out-dir", str(tmp_path / "run"), "--mode", "fid", "--seed", "1",
    ])
    assert code == 2
    assert error_obj(err)["error"] == "input not found"


def test_cli_mode_mismatch_exits_one(tmp_path):
    train_path = write_export(tmp_path / "g.jsonl", copy_task_records(6, 2, "gpt_concat"))
    fid_path = write_export(tmp_path / "f.jsonl", copy_task_records(6, 2, "fid"))
    run_dir = tmp_path / "run"
    code, _, err = run_cli([
        "train", "--export", str(train_path), "--out-dir", str(run_dir),
        "--mode", "gpt_concat", "--seed", "1", "--epochs", "1", "--batch-size", "6",
    ])
    assert code == 0, err
    code, _, err = run_cli([
        "ppl", "--checkpoint", str(run_dir / "checkpoint.pt"), "--export", str(fid_path),
    ])
    assert code == 1
    assert "does not match" in error_obj(err)["detail"]


def test_cli_without_command_prints_help():
    code, out, _ = run_cli([])
    assert code == 1
    assert "usage:" in out
