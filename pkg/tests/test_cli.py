import subprocess
import sys

import pytest

from tdaf.harness.cli import main

SMALL_CFG = """
backbone.stage_channels = 32, 32, 32, 32
data.n_train = 64
data.n_test = 32
train.epochs = 1
train.batch_size = 32
"""


def _summary(capsys):
    line = capsys.readouterr().out.strip().splitlines()[-1]
    return dict(kv.split("=", 1) for kv in line.split())


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "small.cfg"
    p.write_text(SMALL_CFG)
    return p


def test_params(capsys):
    assert main(["params", "--config", "configs/synthetic.cfg"]) == 0
    s = _summary(capsys)
    assert s["cmd"] == "params" and s["consistent"] == "true"
    assert int(s["total"]) == int(s["formula_total"]) > int(s["baseline_total"])
    assert float(s["overhead_pct"]) > 0


def test_train_eval_export(cfg_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--seed", "7", "--out", str(out)]) == 0
    s = _summary(capsys)
    assert s["cmd"] == "train" and s["steps"] == "2"
    assert main(["eval", "--config", str(cfg_file), "--checkpoint", str(out / "best.ckpt")]) == 0
    assert float(_summary(capsys)["accuracy"]) == float(s["best_test_acc"])
    assert main(["export-attn", "--config", str(cfg_file), "--checkpoint", str(out / "final.ckpt"), "--out", str(tmp_path / "attn")]) == 0
    assert _summary(capsys)["maps"] == "5"
    assert (tmp_path / "attn" / "attention_pyramid.png").exists()
    assert main(["report", str(out / "metrics.csv"), "--out", str(tmp_path / "rep")]) == 0
    assert (tmp_path / "rep" / "curves.png").exists()


def test_train_twice_identical_metrics(cfg_file, tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg_file), "--seed", "7", "--out", str(tmp_path / d)]) == 0
    assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()


def test_gen_data(tmp_path, capsys):
    assert main(["gen-data", "--seed", "5", "--n-train", "10", "--n-test", "4", "--out", str(tmp_path)]) == 0
    assert _summary(capsys)["n_train"] == "10"
    assert (tmp_path / "train.bin").stat().st_size == 10 * 3073
    assert (tmp_path / "test_patches.npy").exists()


def test_gradcheck_exit_status(capsys):
    assert main(["gradcheck"]) == 0
    s = _summary(capsys)
    assert s["failed"] == "0"


def test_gradcheck_nonzero_on_failure(monkeypatch, capsys):
    from tdaf.gradcheck import BlockResult, GradCheckReport
    from tdaf.harness import verify

    bad = GradCheckReport(1e-6, [BlockResult("w", 4, 4, 1e-2)])
    monkeypatch.setattr(verify, "gradcheck_suite", lambda seed=0: [("broken", bad)])
    assert main(["gradcheck"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main(["frobnicate"]) != 0
    assert "usage" in capsys.readouterr().err
    assert main(["params", "--bogus"]) != 0
    assert "usage" in capsys.readouterr().err


def test_config_error_cites_line(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("flows.count = 3\nflows.nope = 1\n")
    assert main(["params", "--config", str(bad)]) == 2
    assert "bad.cfg:2" in capsys.readouterr().err


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "tdaf.harness.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "export-attn" in r.stdout
