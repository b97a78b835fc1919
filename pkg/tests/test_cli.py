import json
import os
import subprocess
import sys

import pytest

from exrec import cli


def run_cli(args):
    return cli.main(args)


@pytest.mark.parametrize("sub", ["synth", "prep-movielens", "train",
                                 "fit-dirichlet", "eval", "augment", "serve"])
def test_help_exits_zero(sub, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([sub, "--help"])
    assert exc.value.code == 0
    assert sub in capsys.readouterr().out


def test_unknown_flag_exits_two():
    result = subprocess.run(
        [sys.executable, "-m", "exrec.cli", "synth", "--no-such-flag", "--out", "x"],
        capture_output=True, text=True)
    assert result.returncode == 2
    assert "usage" in result.stderr.lower()


def test_missing_file_exits_one(tmp_path, capsys):
    code = run_cli(["prep-movielens", "--ratings", str(tmp_path / "nope.data"),
                    "--out", str(tmp_path / "out")])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_synth_writes_corpus(tmp_path, capsys):
    out = str(tmp_path / "corpus")
    assert run_cli(["synth", "--users", "6", "--days", "28", "--seed", "3",
                    "--out", out]) == 0
    for name in ("history.csv", "users.csv", "manifest.json", "exercises.json"):
        assert os.path.exists(os.path.join(out, name))
    assert "window count" in capsys.readouterr().out


def test_prep_movielens_toy(tmp_path, capsys):
    ratings = tmp_path / "u.data"
    rows = []
    for user in (1, 2):
        for t, item in enumerate((10, 20, 30, 10, 20)):
            rows.append(f"{user}\t{item}\t4\t{100 * user + t}")
    ratings.write_text("\n".join(rows) + "\n")
    out = str(tmp_path / "ml")
    assert run_cli(["prep-movielens", "--ratings", str(ratings), "--top", "3",
                    "--out", out]) == 0
    assert os.path.exists(os.path.join(out, "split.json"))
    assert "kept 3 items" in capsys.readouterr().out


def test_train_then_fit_dirichlet(tmp_path, capsys):
    corpus_dir = str(tmp_path / "corpus")
    run_cli(["synth", "--users", "10", "--days", "28", "--seed", "1",
             "--out", corpus_dir])
    bundle = str(tmp_path / "bundle")
    assert run_cli(["train", "--corpus", corpus_dir, "--epochs", "12",
                    "--seed", "0", "--out", bundle]) == 0
    assert os.path.exists(os.path.join(bundle, "checkpoint.json"))
    assert run_cli(["fit-dirichlet", "--bundle", bundle, "--corpus", corpus_dir,
                    "--alpha-level", "0.01"]) == 0
    out = capsys.readouterr().out
    assert "threshold" in out
    with open(os.path.join(bundle, "distribution.json")) as fh:
        doc = json.load(fh)
    assert doc["level"] == 0.01
    assert 0.0 <= doc["theta"] <= 1.0


def test_eval_writes_results_json(tmp_path, capsys):
    out = str(tmp_path / "results.json")
    code = run_cli(["eval", "--table1-row", "1", "--corpus", "synth",
                    "--synth-users", "6", "--seeds", "0", "--epochs", "3",
                    "--out", out])
    assert code == 0
    with open(out) as fh:
        doc = json.load(fh)
    assert set(doc) == {"created_at", "runtime_seconds", "result"}
    assert doc["result"]["mean"]["top1"] >= 0.0
    assert "Baseline (Demographic)" in capsys.readouterr().out


def test_eval_active_row_writes_query_rate(tmp_path):
    out = str(tmp_path / "results.json")
    code = run_cli(["eval", "--table1-row", "5", "--corpus", "synth",
                    "--synth-users", "8", "--seeds", "0", "--epochs", "12",
                    "--out", out])
    assert code == 0
    with open(out) as fh:
        doc = json.load(fh)
    assert doc["result"]["config"]["active"] is True
    assert doc["result"]["mean"]["query_rate"] >= 0.0


def test_eval_deterministic_results(tmp_path):
    args = ["eval", "--table1-row", "1", "--corpus", "synth", "--synth-users", "5",
            "--seeds", "2", "--epochs", "2"]
    out1 = str(tmp_path / "r1.json")
    out2 = str(tmp_path / "r2.json")
    run_cli(args + ["--out", out1])
    run_cli(args + ["--out", out2])
    with open(out1) as fh:
        a = json.load(fh)["result"]
    with open(out2) as fh:
        b = json.load(fh)["result"]
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


def test_augment_expert_output(tmp_path, capsys):
    corpus_dir = str(tmp_path / "corpus")
    run_cli(["synth", "--users", "5", "--days", "28", "--seed", "2",
             "--out", corpus_dir])
    out = str(tmp_path / "aug.json")
    assert run_cli(["augment", "--corpus", corpus_dir, "--method", "expert",
                    "--rate", "0.1", "--seed", "3", "--out", out]) == 0
    with open(out) as fh:
        copies = json.load(fh)
    assert len(copies) == 5
    assert "substituted" in capsys.readouterr().out


def test_augment_rules_with_csv(tmp_path):
    corpus_dir = str(tmp_path / "corpus")
    run_cli(["synth", "--users", "8", "--days", "28", "--seed", "4",
             "--out", corpus_dir])
    out = str(tmp_path / "aug.json")
    rules_csv = str(tmp_path / "rules.csv")
    assert run_cli(["augment", "--corpus", corpus_dir, "--method", "rules",
                    "--min-support", "0.02", "--min-confidence", "0.3",
                    "--rules-csv", rules_csv, "--out", out]) == 0
    assert os.path.exists(rules_csv)
    with open(rules_csv) as fh:
        header = fh.readline().strip()
    assert header == "antecedent,consequent,support,confidence"
