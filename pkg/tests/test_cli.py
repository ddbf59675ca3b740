import csv
import io
import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from moft.cli import main
from moft.tensorio import read_tensor, write_tensor


def run(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = main([str(a) for a in argv], stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def weights(tmp_path):
    path = tmp_path / "w.mtb"
    write_tensor(path, np.random.default_rng(99).standard_normal((16, 12)))
    return path


def test_no_args_and_unknown_command(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().err
    assert run("frobnicate")[0] == 1
    assert "usage" in capsys.readouterr().err
    assert run("params", "--method", "moft", "--r", "x")[0] == 1


def test_params():
    assert run("params", "--method", "moft", "--r", 72, "--modules", 160)[1] == "432000\n"
    assert run("params", "--method", "lora", "--r", 8, "--d", 64, "--n", 32)[1] == "768\n"
    code, out, _ = run("params", "--method", "moft", "--r", 4, "--modules", 196, "--json")
    assert code == 0 and json.loads(out)["params"] == 2744
    code, _, err = run("params", "--method", "lora", "--r", 8)
    assert code == 1 and "missing" in err


def test_mem():
    code, out, _ = run("mem", "--method", "fft", "--b", 1, "--s", 1, "--h", 1, "--a", 1)
    assert code == 0 and out.splitlines()[0] == "75"
    code, out, _ = run("mem", "--method", "moft", "--b", 1, "--s", 1, "--h", 1, "--a", 1, "--r", 1, "--json")
    doc = json.loads(out)
    jsonschema.validate(doc, {
        "type": "object",
        "required": ["method", "total_bytes", "breakdown", "formula"],
        "properties": {"total_bytes": {"type": "integer"},
                       "breakdown": {"type": "object", "additionalProperties": {"type": "integer"}}},
    })
    assert doc["total_bytes"] == 119
    assert run("mem", "--method", "moft", "--b", 1, "--s", 1, "--h", 1, "--a", 1)[0] == 1


def test_mem_compare(tmp_path):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({"methods": ["fft", "moft", "boft"],
                               "configs": [{"b": 1, "s": 1, "h": 1, "a": 1, "r": 1},
                                           {"b": 2, "s": 8, "h": 16, "a": 2, "r": 4, "m": 2}]}))
    code, out, _ = run("mem-compare", "--config", cfg)
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [(r["config_index"], r["method"]) for r in rows] == [
        ("0", "fft"), ("0", "moft"), ("1", "fft"), ("1", "moft"), ("1", "boft")]
    assert rows[1]["total_bytes"] == "119"
    out_path = tmp_path / "mem.csv"
    assert run("mem-compare", "--config", cfg, "--out", out_path, "--quiet")[0] == 0
    assert out_path.read_text() == out
    assert json.loads((tmp_path / "mem.csv.manifest.json").read_text())["command"] == "mem-compare"
    cfg.write_text("{not json")
    assert run("mem-compare", "--config", cfg)[0] == 1


def test_decompose(tmp_path, weights):
    out_dir = tmp_path / "dec"
    code, out, _ = run("decompose", "--input", weights, "--rank", 4, "--out-dir", out_dir, "--json")
    assert code == 0 and json.loads(out)["rank"] == 4
    A, B, R = (read_tensor(out_dir / f"{n}.mtb") for n in ("A", "B", "Wres"))
    np.testing.assert_allclose(A @ B + R, read_tensor(weights), atol=1e-12)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    for key in ("command", "args", "input_hashes", "tool_version", "rank", "variant", "svd_mode", "input_hash"):
        assert key in manifest
    assert run("decompose", "--input", weights, "--rank", 13, "--out-dir", out_dir)[0] == 1


def test_train_merge_roundtrip(tmp_path):
    args = ["train", "--task-seed", 2, "--d", 10, "--n", 8, "--rank", 3, "--epochs", 40, "--lr", 0.02,
            "--out", tmp_path / "a.moft", "--log", tmp_path / "h.csv",
            "--save-weights", tmp_path / "w.mtb", "--json"]
    code, out, _ = run(*args)
    assert code == 0
    summary = json.loads(out)
    assert summary["relative_test_loss"] < 1e-6
    header = (tmp_path / "h.csv").read_text().splitlines()[0]
    assert header == "step,epoch,train_loss,test_loss,r_orth_residual"
    code, _, _ = run("merge", "--ckpt", tmp_path / "a.moft", "--weights", tmp_path / "w.mtb",
                     "--out", tmp_path / "wf.mtb")
    assert code == 0
    merged = read_tensor(tmp_path / "wf.mtb")
    assert merged.shape == (10, 8)
    man = json.loads((tmp_path / "wf.mtb.manifest.json").read_text())
    assert set(man["input_hashes"]) == {"ckpt", "weights"}


def test_train_flag_validation(tmp_path):
    base = ["train", "--d", 10, "--n", 8, "--rank", 3, "--out", tmp_path / "a", "--log", tmp_path / "h"]
    assert run(*base, "--lr", 0.1, "--pl-mu", 2)[0] == 1
    assert run(*base, "--scaling", "maybe")[0] == 1
    assert run(*base, "--rank", 20)[0] == 1


def test_train_divergence_exit_code(tmp_path):
    code, _, err = run("train", "--task-seed", 7, "--d", 16, "--n", 12, "--rank", 3, "--epochs", 5,
                       "--lr", 5.0, "--scaling", "on", "--out", tmp_path / "a", "--log", tmp_path / "h")
    assert code == 2 and "diverged" in err


def test_merge_with_wrong_weights(tmp_path, weights):
    run("train", "--d", 16, "--n", 12, "--rank", 2, "--epochs", 1,
        "--out", tmp_path / "a.moft", "--log", tmp_path / "h.csv")
    code, _, err = run("merge", "--ckpt", tmp_path / "a.moft", "--weights", weights, "--out", tmp_path / "x")
    assert code == 1 and "weights" in err


def test_verify(tmp_path, weights):
    code, out, _ = run("verify", "--weights", weights, "--rank", 4, "--trials", 3, "--seed", 1)
    assert code == 0
    doc = json.loads(out)
    jsonschema.validate(doc, {
        "type": "object",
        "required": ["properties", "passes", "failing"],
        "properties": {"properties": {"type": "object", "additionalProperties": {
            "type": "object", "required": ["measured", "tol", "passes"]}}},
    })
    code, out, _ = run("verify", "--weights", weights, "--rank", 4, "--trials", 2, "--variant", "pissa")
    assert code == 0 and json.loads(out)["properties"]["angle_preservation"]["expected_fail"]
    bad = tmp_path / "bad.mtb"
    bad.write_bytes(b"MTB1\x02\0\0\0" + b"\x01" + b"\0" * 7)
    code, _, err = run("verify", "--weights", bad, "--rank", 2)
    assert code == 1 and "offset" in err
    assert run("verify", "--weights", tmp_path / "missing.mtb", "--rank", 2)[0] == 1


def test_verify_failure_exits_2(weights, monkeypatch):
    import moft.cli as cli

    def failing(*a, **k):
        return {"properties": {}, "failing": ["gradient_check"], "passes": False}
    monkeypatch.setattr(cli, "run_suite", failing)
    code, _, err = run("verify", "--weights", weights, "--rank", 2)
    assert code == 2 and "gradient_check" in err


def test_global_flags_before_subcommand():
    assert run("--json", "params", "--method", "moft", "--r", 2)[1].strip().startswith("{")


def test_console_script(tmp_path):
    out = subprocess.run([sys.executable, "-m", "moft", "params", "--method", "moft", "--r", "72",
                          "--modules", "160"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip() == "432000"
    out = subprocess.run([sys.executable, "-m", "moft"], capture_output=True, text=True)
    assert out.returncode == 1 and "usage" in out.stderr
