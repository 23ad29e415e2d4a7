import json
import os
import shutil

import pytest

from handsynth.cli import EXIT_IO, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from handsynth.codec import record_paths
from handsynth.evaluation import load_report
from handsynth.pipeline import load_manifest


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in list(os.environ):
        if key.startswith("HANDSYNTH_"):
            monkeypatch.delenv(key)


def test_help(capsys):
    assert main(["--help"]) == EXIT_OK
    assert "render-one" in capsys.readouterr().out


def test_gen_then_verify(tmp_path, capsys):
    out = tmp_path / "ds"
    assert main(["gen", "--count", "3", "--width", "32", "--height", "32", "--out", str(out)]) == EXIT_OK
    manifest = load_manifest(out)
    assert (manifest.count, manifest.camera.width) == (3, 32)
    capsys.readouterr()

    assert main(["verify", "--dataset", str(out)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report == {"records_checked": 3, "failures": []}


def test_gen_train_count(tmp_path):
    out = tmp_path / "ds"
    args = ["gen", "--count", "4", "--train-count", "3", "--width", "16", "--height", "16"]
    assert main([*args, "--out", str(out)]) == EXIT_OK
    assert load_manifest(out).val_count == 1


def test_gen_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HANDSYNTH_COUNT", "2")
    monkeypatch.setenv("HANDSYNTH_WIDTH", "16")
    monkeypatch.setenv("HANDSYNTH_HEIGHT", "16")
    monkeypatch.setenv("HANDSYNTH_OUT", str(tmp_path / "ds"))
    assert main(["gen"]) == EXIT_OK
    assert load_manifest(tmp_path / "ds").count == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["gen", "--count", "-1", "--out", "x"],
        ["gen", "--out", "x", "--colour", "red"],
        ["gen", "--count", "5"],
        ["eval", "--checkpoints", "c", "--dataset", "d", "--format", "xml"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == EXIT_USAGE


def test_bad_environment_value(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("HANDSYNTH_WORKERS", "zero")
    assert main(["gen", "--out", str(tmp_path / "ds")]) == EXIT_USAGE
    assert "HANDSYNTH_WORKERS" in capsys.readouterr().err


def test_train_count_above_count(tmp_path):
    argv = ["gen", "--count", "2", "--train-count", "3", "--out", str(tmp_path / "ds")]
    assert main(argv) == EXIT_USAGE


def test_verify_corrupted_dataset(small_dataset, tmp_path, capsys):
    root = tmp_path / "copy"
    shutil.copytree(small_dataset, root)
    record_paths(root, 1)[0].write_bytes(b"not a png")
    assert main(["verify", "--dataset", str(root)]) == EXIT_VALIDATION
    report = json.loads(capsys.readouterr().out)
    assert [f["index"] for f in report["failures"]] == [1]


def test_parse_strict(small_dataset, capsys):
    _, label_path = record_paths(small_dataset, 0)
    assert main(["parse", "--file", str(label_path)]) == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["issues"] == []
    assert report["mode"] == "strict"
    assert len(report["vector"]) == 25


def test_parse_garbage(tmp_path, capsys):
    path = tmp_path / "reply.txt"
    path.write_text("the hand is open\n", encoding="utf8")
    assert main(["parse", "--file", str(path), "--mode", "lenient"]) == EXIT_VALIDATION
    report = json.loads(capsys.readouterr().out)
    assert report["vector"] is None
    assert report["issues"]


def test_parse_missing_file(tmp_path):
    assert main(["parse", "--file", str(tmp_path / "absent.txt")]) == EXIT_IO


def test_verify_without_manifest(tmp_path):
    assert main(["verify", "--dataset", str(tmp_path)]) == EXIT_VALIDATION


def test_render_one_matches_dataset(small_dataset, tmp_path):
    argv = ["render-one", "--seed", "42", "--index", "5", "--width", "48", "--height", "48"]
    assert main([*argv, "--out", str(tmp_path)]) == EXIT_OK
    for produced, expected in zip(record_paths(tmp_path, 5), record_paths(small_dataset, 5)):
        assert produced.read_bytes() == expected.read_bytes()


def test_train_then_eval(small_dataset, tmp_path, capsys):
    checkpoints = tmp_path / "ckpts"
    train_args = ["--steps", "4", "--checkpoint-every", "2", "--hidden-size", "8", "--batch-size", "4"]
    argv = ["train", "--dataset", str(small_dataset), "--out", str(checkpoints), *train_args]
    assert main(argv) == EXIT_OK
    assert sorted(p.name for p in checkpoints.iterdir()) == [
        "checkpoint-000002.json",
        "checkpoint-000004.json",
    ]

    report_path = tmp_path / "report.csv"
    argv = ["eval", "--checkpoints", str(checkpoints), "--dataset", str(small_dataset)]
    assert main([*argv, "--out", str(report_path)]) == EXIT_OK
    assert [row.checkpoint_step for row in load_report(report_path).rows] == [2, 4]

    capsys.readouterr()
    assert main([*argv, "--format", "json", "--units", "normalized_squared"]) == EXIT_OK
    document = json.loads(capsys.readouterr().out)
    assert document["units"] == "normalized_squared"
    assert [row["checkpoint"] for row in document["rows"]] == [2, 4]


def test_eval_without_checkpoints(small_dataset, tmp_path):
    argv = ["eval", "--checkpoints", str(tmp_path), "--dataset", str(small_dataset)]
    assert main(argv) == EXIT_VALIDATION
