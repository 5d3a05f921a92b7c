import json
import os
import subprocess
import sys

import numpy as np
import pytest

from hyperite.cli import load_config, main, parse_config, UsageError
from hyperite.data import load_dataset
from hyperite.trainer import TRACE_COLUMNS

FAST = {"epochs": 4, "hidden_dim": 50, "head_hidden": 50}


def run(*argv):
    return main([str(a) for a in argv])


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


def tree_bytes(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for f in files:
            full = os.path.join(root, f)
            with open(full, "rb") as fh:
                out[os.path.relpath(full, directory)] = fh.read()
    return out


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli") / "d0"
    assert run("generate", "--out", d, "--nodes", 40, "--attach", 2, "--k", 1, "--seed", 0) == 0
    return d


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    return write_json(tmp_path_factory.mktemp("cfg") / "fast.json", FAST)


# generate -------------------------------------------------------------------------------
def test_generate_writes_five_files(data_dir):
    assert sorted(os.listdir(data_dir)) == sorted(["meta.json", "edges.csv", "features.csv", "units.csv", "splits.csv"])
    assert load_dataset(str(data_dir)).n == 40


def test_generate_is_deterministic(tmp_path, data_dir):
    assert run("generate", "--out", tmp_path / "again", "--nodes", 40, "--attach", 2, "--k", 1, "--seed", 0) == 0
    assert tree_bytes(tmp_path / "again") == tree_bytes(data_dir)


def test_generate_rejects_negative_k(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("generate", "--out", tmp_path / "x", "--k", -1)
    assert exc.value.code == 2
    assert "--k" in capsys.readouterr().err


def test_generate_rejects_bad_sizes(tmp_path, capsys):
    assert run("generate", "--out", tmp_path / "x", "--nodes", 3, "--attach", 3) == 2
    assert "n > m" in capsys.readouterr().err


def test_generate_seed_from_environment(tmp_path, monkeypatch, data_dir):
    monkeypatch.setenv("HYPERITE_SEED", "0")
    assert run("generate", "--out", tmp_path / "env", "--nodes", 40, "--attach", 2) == 0
    assert tree_bytes(tmp_path / "env") == tree_bytes(data_dir)
    # the flag wins over the environment
    monkeypatch.setenv("HYPERITE_SEED", "5")
    assert run("generate", "--out", tmp_path / "flag", "--nodes", 40, "--attach", 2, "--seed", 0) == 0
    assert tree_bytes(tmp_path / "flag") == tree_bytes(data_dir)
    monkeypatch.setenv("HYPERITE_SEED", "abc")
    assert run("generate", "--out", tmp_path / "bad", "--nodes", 40, "--attach", 2) == 2


# config parsing -------------------------------------------------------------------------
def test_config_unknown_key_named():
    with pytest.raises(UsageError, match="'alpah'"):
        parse_config({"alpah": 0.1})
    with pytest.raises(UsageError, match="sinkhorn.eps"):
        parse_config({"sinkhorn": {"eps": 0.1}})


def test_config_grid_and_range_checks():
    for doc in [{"lr": 0.5}, {"curvature": 0.2}, {"lambda": 1.0}, {"epochs": 0}, {"variant": "x"},
                {"hidden_dim": True}, {"sinkhorn": {"tol": 2.0}}, {"seed": -1}]:
        with pytest.raises(UsageError, match=next(iter(doc))):
            parse_config(doc)


def test_config_mapping():
    kw = parse_config({"lambda": 1e-4, "layers": 2, "alpha": 1, "sinkhorn": {"max_iters": 50}})
    assert kw["lam"] == 1e-4 and kw["layers"] == 2 and kw["alpha"] == 1.0
    assert kw["sinkhorn"].max_iters == 50


def test_config_seed_precedence(tmp_path, monkeypatch):
    path = write_json(tmp_path / "c.json", {"seed": 3})
    monkeypatch.delenv("HYPERITE_SEED", raising=False)
    assert load_config(path).seed == 3
    monkeypatch.setenv("HYPERITE_SEED", "7")
    assert load_config(path).seed == 7
    assert load_config(path, seed=9).seed == 9


# train / evaluate -----------------------------------------------------------------------
def test_train_outputs(tmp_path, data_dir, fast_config):
    out = tmp_path / "run"
    assert run("train", "--data", data_dir, "--config", fast_config, "--out", out) == 0
    assert {"best.ckpt", "final.ckpt", "trace.csv", "config.json"} <= set(os.listdir(out))
    lines = (out / "trace.csv").read_text().splitlines()
    assert lines[0] == ",".join(TRACE_COLUMNS) and len(lines) == 5


def test_train_trace_byte_identical(tmp_path, data_dir, fast_config):
    for name in ("a", "b"):
        assert run("train", "--data", data_dir, "--config", fast_config, "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_train_no_ta_zero_relation_column(tmp_path, data_dir):
    cfg = write_json(tmp_path / "c.json", {**FAST, "variant": "no-ta"})
    assert run("train", "--data", data_dir, "--config", cfg, "--out", tmp_path / "r") == 0
    rows = (tmp_path / "r" / "trace.csv").read_text().splitlines()[1:]
    assert all(float(r.split(",")[2]) == 0.0 for r in rows)


def test_train_bad_config_exit_2(tmp_path, data_dir, capsys):
    cfg = write_json(tmp_path / "c.json", {"alpah": 0.1})
    assert run("train", "--data", data_dir, "--config", cfg, "--out", tmp_path / "r") == 2
    assert "alpah" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{")
    assert run("train", "--data", data_dir, "--config", tmp_path / "broken.json", "--out", tmp_path / "r") == 2


def test_train_missing_data_exit_1(tmp_path, fast_config, capsys):
    assert run("train", "--data", tmp_path / "none", "--config", fast_config, "--out", tmp_path / "r") == 1
    assert "meta.json" in capsys.readouterr().err


def test_evaluate(tmp_path, data_dir, fast_config, capsys):
    out = tmp_path / "run"
    assert run("train", "--data", data_dir, "--config", fast_config, "--out", out) == 0
    capsys.readouterr()
    assert run("evaluate", "--data", data_dir, "--checkpoint", out / "best.ckpt") == 0
    printed = capsys.readouterr().out
    assert all(s in printed for s in ("train", "val", "test", "pehe", "ate_error"))
    first = (out / "metrics.json").read_bytes()
    metrics = json.loads(first)
    assert metrics["test"]["n"] == 40 - 24 - 8 and metrics["test"]["pehe"] >= metrics["test"]["ate_error"]
    assert run("evaluate", "--data", data_dir, "--checkpoint", out / "best.ckpt", "--out", tmp_path / "m") == 0
    assert (tmp_path / "m" / "metrics.json").read_bytes() == first


def test_evaluate_shape_mismatch(tmp_path, data_dir, fast_config, capsys):
    out = tmp_path / "run"
    assert run("train", "--data", data_dir, "--config", fast_config, "--out", out) == 0
    ds = load_dataset(str(data_dir))
    ds.X = np.hstack([ds.X, ds.X])
    from hyperite.data import save_dataset

    save_dataset(ds, str(tmp_path / "wide"))
    capsys.readouterr()
    assert run("evaluate", "--data", tmp_path / "wide", "--checkpoint", out / "best.ckpt") == 1
    err = capsys.readouterr().err
    assert "(n, 50)" in err and "(40, 100)" in err


def test_evaluate_corrupt_checkpoint(tmp_path, data_dir, fast_config):
    out = tmp_path / "run"
    assert run("train", "--data", data_dir, "--config", fast_config, "--out", out) == 0
    blob = bytearray((out / "best.ckpt").read_bytes())
    blob[len(blob) // 2] ^= 0xFF
    (out / "best.ckpt").write_bytes(bytes(blob))
    assert run("evaluate", "--data", data_dir, "--checkpoint", out / "best.ckpt") == 1


# ablate ---------------------------------------------------------------------------------
def test_ablate(tmp_path, data_dir, fast_config, capsys):
    out = tmp_path / "abl"
    assert run("ablate", "--data", data_dir, "--config", fast_config, "--seeds", 2, "--out", out, "--jobs", 2) == 0
    printed = capsys.readouterr().out
    for v in ("full", "no-hb", "no-ta", "features-only"):
        assert v in printed
    rows = (out / "results.csv").read_text().splitlines()
    assert len(rows) == 1 + 4 * 2
    assert len(os.listdir(out / "traces")) == 8
    summary = json.loads((out / "summary.json").read_text())
    assert all(summary[v]["runs"] == 2 and summary[v]["failed"] == 0 for v in summary)
    again = tmp_path / "abl2"
    assert run("ablate", "--data", data_dir, "--config", fast_config, "--seeds", 2, "--out", again) == 0
    assert tree_bytes(again) == tree_bytes(out)


def test_ablate_records_failures(tmp_path, data_dir, fast_config, capsys):
    ds = load_dataset(str(data_dir))
    ds.y = ds.y.copy()
    ds.y[ds.splits["train"][0]] = np.inf
    from hyperite.data import save_dataset

    save_dataset(ds, str(tmp_path / "bad"))
    assert run("ablate", "--data", tmp_path / "bad", "--config", fast_config, "--seeds", 1, "--out", tmp_path / "o") == 0
    assert "failed:" in capsys.readouterr().err
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert all(summary[v]["failed"] == 1 for v in summary)
    assert len((tmp_path / "o" / "results.csv").read_text().splitlines()) == 5


# gradcheck ------------------------------------------------------------------------------
@pytest.fixture(scope="module")
def tiny_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("tiny") / "d"
    assert run("generate", "--out", d, "--nodes", 12, "--attach", 2, "--features", 6, "--seed", 4) == 0
    return d


def test_gradcheck_pass_and_corrupted(tiny_dir, capsys):
    assert run("gradcheck", "--data", tiny_dir) == 0
    out = capsys.readouterr().out
    assert "gradcheck PASS" in out and "loss_y" in out and "wass" in out
    assert run("gradcheck", "--data", tiny_dir, "--corrupt-gradient", 1e-2) == 1
    assert "gradcheck FAIL" in capsys.readouterr().out


def test_gradcheck_size_guard(data_dir, tmp_path, capsys):
    big = tmp_path / "big"
    assert run("generate", "--out", big, "--nodes", 60, "--attach", 2) == 0
    assert run("gradcheck", "--data", big) == 2
    assert "at most 50 nodes" in capsys.readouterr().err


# entry points ---------------------------------------------------------------------------
def test_module_entry_point(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "hyperite", "--version"], capture_output=True, text=True)
    assert ok.returncode == 0 and "0.1.0" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "hyperite", "generate", "--out", str(tmp_path), "--k", "-1"],
                         capture_output=True, text=True)
    assert bad.returncode == 2 and "--k" in bad.stderr
    none = subprocess.run([sys.executable, "-m", "hyperite"], capture_output=True, text=True)
    assert none.returncode == 2
