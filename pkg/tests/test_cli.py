"""CLI surface: subcommands, exit codes, file contracts."""

import json
import os

import numpy as np
import pytest

from spineseg.cli import main
from spineseg.volio import read_volume


def test_unknown_subcommand_exits_2(capsys):
    assert main(["frobnicate"]) == 2


def test_unknown_flag_exits_2(capsys):
    assert main(["gen-data", "--wat", "--out", "x"]) == 2


def test_gen_data_writes_paired_volumes(tmp_path, capsys):
    out = str(tmp_path / "data")
    rc = main(["gen-data", "--seed", "5", "--count", "2", "--patch", "16",
               "--classes", "3", "--out", out])
    assert rc == 0
    img = read_volume(os.path.join(out, "case_000_img"))
    lab = read_volume(os.path.join(out, "case_001_lab"))
    assert img.kind == "image" and img.array.shape == (16, 16, 16)
    assert lab.kind == "labels" and lab.array.max() <= 2
    assert json.load(open(os.path.join(out, "dataset.json")))["count"] == 2


def _write_config(tmp_path, data_dir, **train_overrides):
    net = {
        "patch_size": [8, 8, 8], "n_classes": 2, "channels": [2, 3],
        "pooling_per_axis": [[2, 2, 2]], "variant": "bot",
        "state_size": 2, "expand": 1, "conv_width": 3, "dtype": "f32",
    }
    train = {"epochs": 2, "batch_size": 2, "learning_rate": 0.01,
             "momentum": 0.9, "seed": 0, "fold_count": 3, "fold_index": 0}
    train.update(train_overrides)
    doc = {"network": net, "train": train, "data": {"dir": data_dir}}
    path = str(tmp_path / "config.json")
    with open(path, "w") as f:
        json.dump(doc, f)
    return path


def test_train_eval_predict_pipeline(tmp_path, capsys):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--seed", "1", "--count", "6", "--patch", "8",
                 "--classes", "2", "--out", data]) == 0
    cfg = _write_config(tmp_path, data)
    out = str(tmp_path / "run")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "checkpoint.json"))
    metrics = [json.loads(line) for line in
               open(os.path.join(out, "metrics.jsonl"))]
    assert len(metrics) == 2 and "loss" in metrics[0]

    report = str(tmp_path / "report.json")
    assert main(["eval", "--ckpt", os.path.join(out, "checkpoint"),
                 "--data", data, "--report", report]) == 0
    rep = json.load(open(report))
    assert 0.0 <= rep["mean_foreground_dice"] <= 1.0

    pred = str(tmp_path / "pred")
    assert main(["predict", "--ckpt", os.path.join(out, "checkpoint"),
                 "--in", os.path.join(data, "case_000_img"),
                 "--out", pred]) == 0
    vol = read_volume(pred)
    assert vol.kind == "labels"
    assert vol.array.shape == (8, 8, 8)


def test_train_resume_continues(tmp_path, capsys):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--seed", "2", "--count", "6", "--patch", "8",
                 "--classes", "2", "--out", data]) == 0
    cfg2 = _write_config(tmp_path, data, epochs=2)
    out1 = str(tmp_path / "run1")
    assert main(["train", "--config", cfg2, "--out", out1]) == 0

    cfg4 = str(tmp_path / "config4.json")
    doc = json.load(open(_write_config(tmp_path, data, epochs=4)))
    with open(cfg4, "w") as f:
        json.dump(doc, f)
    out2 = str(tmp_path / "run2")
    assert main(["train", "--config", cfg4, "--out", out2,
                 "--resume", os.path.join(out1, "checkpoint")]) == 0
    metrics = [json.loads(line) for line in
               open(os.path.join(out2, "metrics.jsonl"))]
    assert metrics[-1]["epoch"] == 3


def test_predict_rejects_labels_volume(tmp_path, capsys):
    data = str(tmp_path / "data")
    assert main(["gen-data", "--seed", "3", "--count", "6", "--patch", "8",
                 "--classes", "2", "--out", data]) == 0
    cfg = _write_config(tmp_path, data)
    out = str(tmp_path / "run")
    assert main(["train", "--config", cfg, "--out", out]) == 0
    rc = main(["predict", "--ckpt", os.path.join(out, "checkpoint"),
               "--in", os.path.join(data, "case_000_lab"),
               "--out", str(tmp_path / "x")])
    assert rc == 1


def test_missing_config_is_error_not_crash(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "o")]) == 1


def test_gradcheck_single_module(capsys):
    assert main(["gradcheck", "--module", "losses"]) == 0
    out = capsys.readouterr().out
    assert "dice_loss" in out and "ok" in out


def test_bench_scan_emits_records(tmp_path, capsys):
    report = str(tmp_path / "bench.txt")
    rc = main(["bench-scan", "--lmin", "64", "--lmax", "256",
               "--variants", "seq,chunked", "--report", report])
    assert rc == 0
    lines = open(report).read().strip().splitlines()
    assert lines[0].startswith("L, variant, wall_ns")
    assert len(lines) == 1 + 2 * 3  # header + 2 variants x 3 sizes
    payload = [l.split(",") for l in lines[1:]]
    assert {p[1].strip() for p in payload} == {"seq", "chunked"}
    chunk_errs = [float(p[3]) for p in payload if p[1].strip() == "chunked"]
    assert max(chunk_errs) <= 1e-12
