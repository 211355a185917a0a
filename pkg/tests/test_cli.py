import json
import subprocess
import sys

import pytest

from magnet.cli import dispatch


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert dispatch(["gen", "--system", "pm", "--n", "4", "--m", "4", "--l", "60", "--seed", "11",
                     "--out", str(d / "train.magd")]) == 0
    assert dispatch(["gen", "--system", "pm", "--n", "4", "--m", "3", "--l", "40", "--seed", "12",
                     "--out", str(d / "test.magd")]) == 0
    (d / "cfg.json").write_text(json.dumps({"epochs": 2, "seed": 0, "model_seed": 1}))
    assert dispatch(["train", "--data", str(d / "train.magd"), "--config", str(d / "cfg.json"),
                     "--out", str(d / "m.magc")]) == 0
    return d


def test_gen_is_reproducible(tmp_path):
    args = ["gen", "--system", "kuramoto", "--n", "3", "--m", "2", "--l", "10", "--seed", "4"]
    assert dispatch(args + ["--out", str(tmp_path / "a.magd")]) == 0
    assert dispatch(args + ["--out", str(tmp_path / "b.magd")]) == 0
    assert (tmp_path / "a.magd").read_bytes() == (tmp_path / "b.magd").read_bytes()
    assert (tmp_path / "a.meta.json").read_text() == (tmp_path / "b.meta.json").read_text()


def test_gen_swarm_counts_predator(tmp_path):
    from magnet.io import read_dataset
    out = tmp_path / "s.magd"
    assert dispatch(["gen", "--system", "swarm", "--n", "5", "--m", "1", "--l", "3", "--seed", "0",
                     "--out", str(out)]) == 0
    assert read_dataset(out).states.shape == (1, 3, 5, 2)


def test_inspect_reports_table_counts(workdir, capsys):
    assert dispatch(["inspect", "--ckpt", str(workdir / "m.magc")]) == 0
    out = capsys.readouterr().out
    assert "core=9108" in out and "wrapper=120" in out


def test_eval_csv(workdir):
    csv = workdir / "e.csv"
    assert dispatch(["eval", "--ckpt", str(workdir / "m.magc"), "--data", str(workdir / "test.magd"),
                     "--horizon", "30", "--out-csv", str(csv)]) == 0
    lines = csv.read_text().splitlines()
    assert lines[0] == "timestep,mse_mean,ci_low,ci_high"
    assert len(lines) == 31
    assert [int(row.split(",")[0]) for row in lines[1:]] == list(range(1, 31))


def test_eval_noisy_prefix(workdir):
    csv = workdir / "n.csv"
    assert dispatch(["eval", "--ckpt", str(workdir / "m.magc"), "--data", str(workdir / "test.magd"),
                     "--horizon", "20", "--out-csv", str(csv), "--noisy", "--prefix", "16"]) == 0
    assert len(csv.read_text().splitlines()) == 21


def test_baselines(workdir):
    assert dispatch(["baseline", "--kind", "linear", "--test", str(workdir / "test.magd"),
                     "--horizon", "10", "--out-csv", str(workdir / "lin.csv")]) == 0
    for kind in ("mlp", "lstm"):
        assert dispatch(["baseline", "--kind", kind, "--data", str(workdir / "train.magd"),
                         "--config", str(workdir / "cfg.json"), "--out", str(workdir / f"{kind}.magc"),
                         "--test", str(workdir / "test.magd"), "--horizon", "10",
                         "--out-csv", str(workdir / f"{kind}.csv")]) == 0
        assert len((workdir / f"{kind}.csv").read_text().splitlines()) == 11
    assert dispatch(["baseline", "--kind", "linear", "--horizon", "10"]) == 1


def test_retune_to_larger_population(workdir, capsys):
    stream = workdir / "stream.magd"
    assert dispatch(["gen", "--system", "pm", "--n", "8", "--m", "1", "--l", "150", "--seed", "31",
                     "--out", str(stream)]) == 0
    cfg = workdir / "re.json"
    cfg.write_text(json.dumps({"epochs": 1, "threshold": 1e9}))
    assert dispatch(["retune", "--ckpt", str(workdir / "m.magc"), "--data", str(stream),
                     "--config", str(cfg), "--out", str(workdir / "r.magc")]) == 0
    assert "threshold never crossed" in capsys.readouterr().out
    assert dispatch(["inspect", "--ckpt", str(workdir / "r.magc")]) == 0
    out = capsys.readouterr().out
    assert "core=9108" in out and "wrapper=496" in out


def test_usage_errors_exit_1(capsys):
    assert dispatch(["inspect", "--ckpt", "x", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert dispatch(["frobnicate"]) == 1
    assert dispatch([]) == 1
    assert dispatch(["gen", "--system", "pm", "--n", "two", "--m", "1", "--l", "1", "--seed", "0",
                     "--out", "x"]) == 1
    assert dispatch(["--help"]) == 0


def test_runtime_errors_exit_2(workdir, tmp_path, capsys):
    assert dispatch(["inspect", "--ckpt", str(tmp_path / "missing.magc")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"epoch": 3}))
    assert dispatch(["train", "--data", str(workdir / "train.magd"), "--config", str(bad),
                     "--out", str(tmp_path / "x.magc")]) == 2
    assert "unknown config keys" in capsys.readouterr().err
    assert dispatch(["eval", "--ckpt", str(workdir / "train.magd"), "--data",
                     str(workdir / "test.magd"), "--horizon", "5", "--out-csv",
                     str(tmp_path / "x.csv")]) == 2


def test_module_entry_point(workdir):
    proc = subprocess.run([sys.executable, "-m", "magnet", "inspect", "--ckpt",
                           str(workdir / "m.magc")], capture_output=True, text=True)
    assert proc.returncode == 0 and "core=9108" in proc.stdout
