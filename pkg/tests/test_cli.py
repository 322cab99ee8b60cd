import json
import subprocess
import sys

import numpy as np
import pytest

from hkq import io
from hkq.cli import run_cli


def test_generate_writes_sets_with_truth(tmp_path):
    assert run_cli(["generate", "--alpha", "2", "--k", "0.5", "--n", "1000", "--sets", "10", "--seed", "7",
                    "--out", str(tmp_path)]) == 0
    files = io.envelope_files(tmp_path)
    assert len(files) == 10
    sets = [io.read_envelope_file(f) for f in files]
    assert all(s.truth.alpha == 2.0 and s.truth.k == 0.5 and len(s) == 1000 for s in sets)
    assert len({s.seed for s in sets}) == 10


def test_generate_with_noise(tmp_path):
    assert run_cli(["generate", "--alpha", "1,4", "--k", "0", "--n", "200", "--sets", "2", "--snr", "30",
                    "--out", str(tmp_path)]) == 0
    sets = [io.read_envelope_file(f) for f in io.envelope_files(tmp_path)]
    assert len(sets) == 4 and all(s.snr_db == 30.0 for s in sets)


def test_usage_errors_exit_2(capsys):
    assert run_cli([]) == 2
    assert run_cli(["bogus"]) == 2
    assert run_cli(["generate", "--no-such-flag"]) == 2
    assert run_cli(["generate", "--threads", "0", "--out", "x"]) == 2


def test_validation_errors_exit_1(tmp_path, capsys):
    assert run_cli(["generate", "--alpha", "-1", "--k", "0", "--out", str(tmp_path)]) == 1
    assert "alpha" in capsys.readouterr().err
    assert run_cli(["generate", "--out", str(tmp_path)]) == 1
    assert run_cli(["features", "--input", str(tmp_path / "missing"), "--out", str(tmp_path / "f.csv")]) == 1
    bad = tmp_path / "r" / "x.env"
    bad.parent.mkdir()
    bad.write_text('{"schema": "hkq-env-v1"}\n1.0\n-2.0\n')
    assert run_cli(["ingest", "--input", str(bad.parent)]) == 1
    assert "line 3" in capsys.readouterr().err


def test_ingest_needs_two_patches(tmp_path, capsys):
    d = tmp_path / "region"
    assert run_cli(["generate", "--alpha", "3", "--k", "0.2", "--n", "100", "--sets", "1", "--out", str(d)]) == 0
    assert run_cli(["ingest", "--input", str(d)]) == 1
    assert run_cli(["generate", "--alpha", "3", "--k", "0.2", "--n", "100", "--sets", "3", "--out", str(d)]) == 0
    assert run_cli(["ingest", "--input", str(d)]) == 0
    assert "3 patches" in capsys.readouterr().out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    w = tmp_path_factory.mktemp("cli")
    assert run_cli(["generate", "--training", "300", "--n", "400", "--seed", "2", "--out", str(w / "train")]) == 0
    assert run_cli(["features", "--input", str(w / "train"), "--out", str(w / "train.csv")]) == 0
    assert run_cli(["train", "--features", str(w / "train.csv"), "--steps", "200", "--batch-size", "32",
                    "--hidden", "8,8", "--seed", "2", "--out", str(w / "m.bnn")]) == 0
    return w


def test_features_csv(trained):
    ft = io.read_features(trained / "train.csv")
    assert ft.values.shape == (300, 11)
    assert not np.isnan(ft.truth()).any()
    assert len(set(ft.groups)) == 300


def test_predict_then_decompose(trained, tmp_path):
    w = tmp_path
    assert run_cli(["generate", "--alpha", "2,8", "--k", "0.5", "--n", "400", "--sets", "4", "--out", str(w / "g")]) == 0
    assert run_cli(["features", "--input", str(w / "g"), "--out", str(w / "g.csv")]) == 0
    assert run_cli(["predict", "--model", str(trained / "m.bnn"), "--features", str(w / "g.csv"),
                    "--draws", "50", "--out", str(w / "d.csv")]) == 0
    groups, means, _, _ = io.read_draws(w / "d.csv")
    assert means.shape == (8, 50, 2)
    assert run_cli(["decompose", "--draws", str(w / "d.csv"), "--out", str(w / "u.csv")]) == 0
    rows = io.read_report(w / "u.csv")
    assert len(rows) == 2 * 2 * 2
    assert {r["set_id"] for r in rows} == {"a2_k0.5", "a8_k0.5"}
    for r in rows:
        assert float(r["q25"]) <= float(r["q75"])
        assert float(r["epistemic"]) >= 0 and float(r["aleatoric"]) >= 0


def test_decompose_patches(trained, tmp_path):
    for region in ("liver", "phantom"):
        assert run_cli(["generate", "--alpha", "5", "--k", "0.3", "--n", "400", "--sets", "3", "--seed",
                        str(len(region)), "--out", str(tmp_path / region)]) == 0
    dirs = [str(p) for d in ("liver", "phantom") for p in (tmp_path / d).iterdir()]
    out = tmp_path / "u.csv"
    assert run_cli(["decompose", "--patches", *dirs, "--model", str(trained / "m.bnn"), "--n-draws", "50",
                    "--out", str(out)]) == 0
    rows = io.read_report(out)
    assert {r["method"] for r in rows} == {"procedural", "predictive"}
    assert all(r["n_draws"] == "50" and r["n_realizations"] == "3" for r in rows)
    assert "epistemic" in rows[0] and "aleatoric" in rows[0]


def test_table_commands(tmp_path):
    t = tmp_path / "t.csv"
    assert run_cli(["table", "build", "--n-alpha", "3", "--n-k", "2", "--repetitions", "2", "--out", str(t)]) == 0
    assert run_cli(["generate", "--alpha", "2", "--k", "0", "--n", "1000", "--sets", "2", "--out", str(tmp_path / "g")]) == 0
    assert run_cli(["features", "--input", str(tmp_path / "g"), "--out", str(tmp_path / "g.csv")]) == 0
    assert run_cli(["table", "estimate", "--table", str(t), "--features", str(tmp_path / "g.csv"),
                    "--out", str(tmp_path / "e.csv")]) == 0
    rows = io.read_report(tmp_path / "e.csv")
    table = io.read_table(t)
    grid = {(p.alpha, p.k) for p in table.params}
    assert all((float(r["alpha"]), float(r["k"])) in grid for r in rows)


def test_evaluate_writes_report(trained, tmp_path):
    assert run_cli(["evaluate", "--model", str(trained / "m.bnn"), "--n-alpha", "2", "--n-k", "2",
                    "--realizations", "3", "--samples", "300", "--n-draws", "4", "--snr", "none", "20",
                    "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["levels"]) == {"clean", "20"}
    assert len(io.read_report(tmp_path / "report.csv")) == 2 * 4


def test_pipeline_is_reproducible(tmp_path, cli_pipeline):
    a = cli_pipeline(tmp_path / "a", 7)
    b = cli_pipeline(tmp_path / "b", 7)
    assert a == b
    assert cli_pipeline(tmp_path / "c", 8) != a


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "hkq", "bogus"], capture_output=True)
    assert done.returncode == 2
    done = subprocess.run([sys.executable, "-m", "hkq", "ingest", "--input", str(tmp_path)], capture_output=True)
    assert done.returncode == 1
