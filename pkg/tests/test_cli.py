import json
import os
import subprocess
import sys

import numpy as np
import pytest

from memdeblur.cli import main
from memdeblur.config import ModelConfig
from memdeblur.evaluation.compute import count_macs
from memdeblur.evaluation.metrics import evaluate_sequence
from memdeblur.io import load_sequence, save_sequence

TINY = {
    "preset": "toy",
    "model": {"base_channels": 8, "key_channels": 8, "value_channels": 8, "decode_channels": 4, "scales": 2},
    "train": {"batch_size": 1, "patch": 32, "subseq_len": 3, "steps_per_epoch": 2, "total_epochs": 1},
}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, [json.loads(l) for l in out.splitlines() if l.strip()], err


def test_profile_equals_library(capsys):
    code, lines, _ = run(capsys, "profile", "--preset", "toy", "--dims", "64x96", "--frames", "5")
    assert code == 0
    assert lines[0]["gmacs"] == count_macs(ModelConfig.toy(), (64, 96), 5).gmacs


def test_profile_periods_flag_and_plot(capsys, tmp_path):
    code, lines, _ = run(capsys, "profile", "--preset", "full", "--periods", "3,2,1", "--frames", "10",
                         "--plot", tmp_path / "p.png")
    assert code == 0 and (tmp_path / "p.png").stat().st_size > 0
    assert lines[0]["gmacs"] == count_macs(ModelConfig.full(periods=(3, 2, 1)), (720, 1280), 10).gmacs


def test_synth_window_one_byte_identical(capsys, tmp_path):
    paths = save_sequence(np.random.default_rng(0).random((3, 3, 8, 8)), tmp_path / "sharp")
    code, lines, _ = run(capsys, "synth", tmp_path / "sharp", tmp_path / "pair", "--window", "1")
    assert code == 0 and lines[0]["frames"] == 3
    for p in paths:
        assert (tmp_path / "pair" / "blurry" / p.name).read_bytes() == p.read_bytes()
        assert (tmp_path / "pair" / "sharp" / p.name).read_bytes() == p.read_bytes()


def test_end_to_end(capsys, tmp_path):
    cfg = tmp_path / "tiny.json"
    cfg.write_text(json.dumps(TINY))
    code, lines, _ = run(capsys, "synth", tmp_path / "sharp", tmp_path / "pair", "--window", "3",
                         "--generate", "8", "--height", "40", "--width", "40")
    assert code == 0 and lines[0]["frames"] == 6

    code, lines, _ = run(capsys, "train", tmp_path / "pair", tmp_path / "run", "--config", cfg, "--seed", "1",
                         "--plot")
    assert code == 0 and lines[0]["epoch"] == 1 and lines[-1]["step"] == 2
    assert (tmp_path / "run" / "training_curve.png").exists()
    ckpt = tmp_path / "run" / "checkpoint_last.mdck"

    code, lines, _ = run(capsys, "deblur", ckpt, tmp_path / "pair" / "blurry", tmp_path / "out",
                         "--periods", "2,1,1", "--capacity", "3", "--attention-trace", tmp_path / "trace.bin")
    assert code == 0 and lines[0]["config"]["periods"] == [2, 1, 1] and lines[0]["config"]["capacity"] == 3
    assert len(load_sequence(tmp_path / "out")) == 6

    code, lines, _ = run(capsys, "eval", tmp_path / "out", tmp_path / "pair" / "sharp", "--plot", tmp_path / "m.png")
    assert code == 0 and [l["frame"] for l in lines[:6]] == list(range(6))
    expected = evaluate_sequence(load_sequence(tmp_path / "out"), load_sequence(tmp_path / "pair" / "sharp"))
    assert lines[-1]["kind"] == "summary" and lines[-1]["psnr_db"] == pytest.approx(expected.psnr_db)
    assert (tmp_path / "m.png").exists()

    code, lines, _ = run(capsys, "visualize", tmp_path / "trace.bin", "--frame", "4", "--scale", "1",
                         "--location", "10,20", "--out", tmp_path / "vis" / "heat.png")
    assert code == 0 and lines[0]["query_cell"] == [0, 1]
    assert all(os.path.exists(p) for p in lines[0]["heatmaps"]) and os.path.exists(lines[0]["composite"])

    code, _, err = run(capsys, "visualize", tmp_path / "trace.bin", "--frame", "4", "--location", "999,0",
                       "--out", tmp_path / "vis" / "bad.png")
    assert code == 2 and err.startswith("error: usage:")


def test_eval_identical_reports_inf(capsys, tmp_path):
    save_sequence(np.random.default_rng(1).random((2, 3, 16, 16)), tmp_path / "a")
    code, lines, _ = run(capsys, "eval", tmp_path / "a", tmp_path / "a")
    assert code == 0 and lines[0]["psnr_db"] == "inf" and lines[-1]["psnr_db"] == 100.0


def test_missing_input_is_io_error(capsys, tmp_path):
    code, _, err = run(capsys, "eval", tmp_path / "none", tmp_path / "none")
    assert code == 1 and err.startswith("error: io:")


def test_odd_eval_args_is_usage_error(capsys, tmp_path):
    code, _, err = run(capsys, "eval", tmp_path)
    assert code == 2 and err.startswith("error: usage:")


def test_unknown_flag_prints_help_and_error_line():
    proc = subprocess.run([sys.executable, "-m", "memdeblur.cli", "profile", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage: memdeblur" in proc.stderr
    assert proc.stderr.strip().splitlines()[-1].startswith("error: usage:")


def test_bad_thread_env(capsys, monkeypatch):
    monkeypatch.setenv("MEMDEBLUR_THREADS", "many")
    code, _, err = run(capsys, "profile", "--frames", "2", "--dims", "32x32")
    assert code == 2 and "MEMDEBLUR_THREADS" in err
