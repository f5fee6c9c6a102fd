import hashlib
import subprocess
import sys

import pytest
import yaml

from learncodes import config as C
from learncodes.cli import run
from learncodes.errors import ConfigurationError
from learncodes.evaluation import read_report, report_csv

SMALL_TRAIN = ["--epochs", "1", "--batch-size", "16", "--batches-per-epoch", "1", "-K", "8",
               "--set", "train.calibration_blocks=1000", "--set", "train.test_batches=1",
               "--set", "model.dec_units=6", "--set", "model.enc_units=3",
               "--set", "train.reg_window=3"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_sweep_example_has_five_rows(tmp_path, capsys):
    code = run(["sweep", "--arch", "conv_baseline", "--rate", "1/2", "--m", "2", "--channel",
                "awgn", "--snr", "0:8:2", "--max-blocks", "200", "--out", str(tmp_path)])
    assert code == 0
    rep = read_report(tmp_path / "report.csv")
    assert [r.snr_db for r in rep.rows] == [0.0, 2.0, 4.0, 6.0, 8.0]
    assert "rows=5" in capsys.readouterr().out
    assert (tmp_path / "resolved_config.yaml").exists()


def test_resolved_config_reproduces_run(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["sweep", "--arch", "uncoded", "--snr", "0,3", "--max-blocks", "50",
                "--seed", "9", "--out", str(a)]) == 0
    cfg = yaml.safe_load((a / "resolved_config.yaml").read_text())
    assert cfg["seed"] == 9
    assert run(["sweep", "--config", str(a / "resolved_config.yaml"), "--out", str(b)]) == 0
    assert (a / "report.csv").read_bytes() == (b / "report.csv").read_bytes()


def test_selfcheck_exits_zero(tmp_path):
    assert run(["selfcheck", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "selfcheck.txt").read_text().splitlines()
    assert lines and all(line.startswith("PASS") for line in lines)


def test_unknown_key_exit_two(tmp_path, capsys):
    assert run(["sweep", "--set", "train.batchsz=3", "--out", str(tmp_path)]) == 2
    assert "batchsz" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("train:\n  batchsz: 3\n")
    assert run(["sweep", "--config", str(bad), "--out", str(tmp_path)]) == 2
    with pytest.raises(ConfigurationError, match="batchsz"):
        C.load_config(bad)


def test_type_mismatch_and_bad_values():
    with pytest.raises(ConfigurationError, match="train.lr"):
        C.load_config(None, {"train.lr": "fast"})
    with pytest.raises(ConfigurationError, match="delay"):
        C.load_config(None, {"arch": "channel_ae", "delay": 3})
    with pytest.raises(ConfigurationError, match="snr"):
        C.load_config(None, {"snr": "8:0:1"})
    with pytest.raises(ConfigurationError):
        C.load_config(None, {"preset": "no_such_preset"})


def test_flag_overrides_file(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("train:\n  lr: 0.001\n")
    assert C.load_config(f)["train"]["lr"] == 0.001
    assert C.load_config(f, {"train.lr": 0.0005})["train"]["lr"] == 0.0005


def test_empty_file_plus_flags(tmp_path):
    f = tmp_path / "empty.yaml"
    f.write_text("")
    cfg = C.load_config(f, {"arch": "learn", "delay": 10, "rate": "1/3", "seed": 7})
    assert (cfg["arch"], cfg["delay"], cfg["rate"], cfg["seed"]) == ("learn", 10, "1/3", 7)


def test_snr_grid_parsing():
    assert C.parse_snr_grid("0:8:2") == [0.0, 2.0, 4.0, 6.0, 8.0]
    assert C.parse_snr_grid("-1:2:0.5") == [-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]
    assert C.parse_snr_grid("1,3.5") == [1.0, 3.5]
    assert C.parse_snr_grid(4) == [4.0]
    with pytest.raises(ConfigurationError):
        C.parse_snr_grid("0:1")


def test_presets_resolve():
    for name in C.PRESETS:
        cfg = C.load_config(None, {"preset": name})
        assert cfg["preset"] == name
    learn = C.load_config(None, {"preset": "learn_r13_d10_awgn"})
    assert (learn["arch"], learn["rate"], learn["delay"]) == ("learn", "1/3", 10)


def test_list_presets(capsys):
    assert run(["--list-presets"]) == 0
    assert "learn_r13_d10_awgn" in capsys.readouterr().out.split()


def test_no_command_is_usage_error():
    assert run([]) == 2


def test_train_deterministic_then_eval_probe(tmp_path):
    args = ["train", "--arch", "learn", "--delay", "10", "--rate", "1/3", "--seed", "7"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(args + SMALL_TRAIN + ["--out", str(a)]) == 0
    assert run(args + SMALL_TRAIN + ["--out", str(b)]) == 0
    assert sha(a / "model.ckpt") == sha(b / "model.ckpt")
    assert (a / "history.csv").read_text() == (b / "history.csv").read_text()

    ckpt = str(a / "model.ckpt")
    common = ["--arch", "learn", "--checkpoint", ckpt, "-K", "8", "--rate", "1/3"]
    assert run(["eval", *common, "--channel", "atn", "--snr", "0:2:1", "--max-blocks", "50",
                "--out", str(tmp_path / "e")]) == 0
    rep = read_report(tmp_path / "e" / "report_robustness.csv")
    assert len(rep.rows) == 3 and rep.metadata["tag"] == "robustness"
    assert run(["probe", *common, "--probe-kind", "decoder-pulse", "--position", "2",
                "--out", str(tmp_path / "p")]) == 0
    assert (tmp_path / "p" / "probe_decoder-pulse_2.csv").exists()
    assert run(["calibrate", *common, "--out", str(tmp_path / "c")]) == 0


def test_eval_adaptivity_writes_retrained(tmp_path):
    a = tmp_path / "a"
    assert run(["train", "--arch", "channel_ae", *SMALL_TRAIN, "--out", str(a)]) == 0
    out = tmp_path / "e"
    assert run(["eval", "--arch", "channel_ae", "--checkpoint", str(a / "model.ckpt"), "-K", "8",
                "--mode", "decoder_only", *SMALL_TRAIN, "--snr", "1", "--max-blocks", "20",
                "--format", "json", "--out", str(out)]) == 0
    assert (out / "model_decoder_only.ckpt").exists()
    assert read_report(out / "report_decoder_only.json").metadata["mode"] == "decoder_only"


def test_runtime_failure_exit_one(tmp_path):
    assert run(["eval", "--arch", "channel_ae", "--checkpoint", str(tmp_path / "none.ckpt"),
                "--out", str(tmp_path)]) == 1


def test_baseline_writes_both_reports(tmp_path):
    assert run(["baseline", "--rate", "1/3", "--m", "3", "--snr", "0,2", "--max-blocks", "40",
                "-K", "20", "--out", str(tmp_path)]) == 0
    conv = read_report(tmp_path / "report.csv")
    ref = read_report(tmp_path / "report_uncoded.csv")
    assert len(conv.rows) == len(ref.rows) == 2
    assert report_csv(conv) != report_csv(ref)


def test_console_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "learncodes", "--list-presets"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "ae_r12_awgn" in proc.stdout
