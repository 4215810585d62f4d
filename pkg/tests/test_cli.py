"""Command surface: exit codes, error JSON, file outputs, and replay determinism."""
import json
import subprocess
import sys

import numpy as np
import pytest

from infokit import load_table, make_table, merge, save_table
from infokit.cli import main

from conftest import random_table


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture
def fixture_dir(tmp_path, capsys):
    out = tmp_path / "fx"
    code, _, err = run(
        capsys, "gen-fixture", "--classes", 3, "--dim", 6, "--per-class", 40,
        "--eval-per-class", 20, "--test-per-class", 20, "--shift", "2.0",
        "--with-logits", "--out-dir", out,
    )
    assert code == 0, err
    return out


def test_gen_fixture_writes_bundle(fixture_dir):
    files = {p.name for p in fixture_dir.iterdir()}
    assert {"train.emb1", "base.emb1", "pool.emb1", "eval.emb1", "test.emb1", "fixture.json"} <= files
    base = load_table(fixture_dir / "base.emb1")
    pool = load_table(fixture_dir / "pool.emb1")
    train = load_table(fixture_dir / "train.emb1")
    assert base.n_samples + pool.n_samples == train.n_samples
    assert base.domain_tag == "base" and pool.domain_tag == "pool"
    assert load_table(fixture_dir / "train.emb1").logits is not None


def test_score_writes_csv_and_stats(fixture_dir, tmp_path, capsys):
    out = tmp_path / "scores.csv"
    code, _, err = run(capsys, "score", "--in", fixture_dir / "pool.emb1",
                       "--indicator", "distance-entropy", "--out", out)
    assert code == 0, err
    lines = out.read_text().splitlines()
    assert lines[0].startswith("# ")
    assert lines[1] == "id,label,indicator,score"
    pool = load_table(fixture_dir / "pool.emb1")
    assert len(lines) == 2 + pool.n_samples
    stats = json.loads((tmp_path / "scores.csv.stats.json").read_text())
    assert stats["config"]["command"] == "score"
    assert len(stats["stats"]["classes"]) == pool.n_classes


def test_score_missing_logits_exit_2(tmp_path, capsys):
    t = random_table(seed=1)
    path = tmp_path / "t.emb1"
    save_table(t, path)
    code, _, err = run(capsys, "score", "--in", path, "--indicator", "entropy",
                       "--out", tmp_path / "s.csv")
    assert code == 2
    payload = json.loads(err)
    assert payload["error"]["code"] == "MISSING_LOGITS"


def test_score_rerun_byte_identical(fixture_dir, tmp_path, capsys):
    out = tmp_path / "s.csv"
    args = ("score", "--in", fixture_dir / "pool.emb1", "--indicator", "metric", "--out", out)
    assert run(capsys, *args)[0] == 0
    first = out.read_bytes()
    first_stats = (tmp_path / "s.csv.stats.json").read_bytes()
    assert run(capsys, *args)[0] == 0
    assert out.read_bytes() == first
    assert (tmp_path / "s.csv.stats.json").read_bytes() == first_stats


def test_select_balanced_budget(fixture_dir, tmp_path, capsys):
    scores = tmp_path / "s.csv"
    assert run(capsys, "score", "--in", fixture_dir / "pool.emb1",
               "--indicator", "metric", "--out", scores)[0] == 0
    plan_path = tmp_path / "plan.json"
    code, _, err = run(capsys, "select", "--scores", scores, "--budget", 30,
                       "--scheme", "balanced", "--direction", "goodset", "--out", plan_path)
    assert code == 0, err
    plan = json.loads(plan_path.read_text())["plan"]
    assert len(plan["selected_ids"]) == 30
    assert all(v == 10 for v in plan["per_class_budget"].values())


def test_select_budget_over_pool_exit_2(fixture_dir, tmp_path, capsys):
    scores = tmp_path / "s.csv"
    run(capsys, "score", "--in", fixture_dir / "pool.emb1", "--indicator", "metric", "--out", scores)
    code, _, err = run(capsys, "select", "--scores", scores, "--budget", 10**6, "--out", tmp_path / "p.json")
    assert code == 2
    assert json.loads(err)["error"]["code"] == "INSUFFICIENT_POOL"


def test_simulate_add_round_counting(fixture_dir, tmp_path, capsys):
    out = tmp_path / "sim"
    code, _, err = run(
        capsys, "simulate", "add", "--base", fixture_dir / "base.emb1",
        "--pool", fixture_dir / "pool.emb1", "--eval", fixture_dir / "eval.emb1",
        "--indicator", "entropy", "--budget", "0.1", "--rounds", 3,
        "--epochs", 30, "--out-dir", out,
    )
    assert code == 0, err
    for arm in ("hid", "lid", "random"):
        lines = (out / f"{arm}.csv").read_text().splitlines()
        assert lines[1] == "round,size,accuracy"
        assert len(lines) == 2 + 4  # config line + header + round 0..3
    hid = json.loads((out / "hid.json").read_text())["curve"]
    assert hid["rounds"][0]["plan"] is None
    assert hid["rounds"][1]["plan"]["direction"] == "goodset"


def test_simulate_add_full_budget_arms_converge(fixture_dir, tmp_path, capsys):
    out = tmp_path / "sim_full"
    pool = load_table(fixture_dir / "pool.emb1")
    code, _, err = run(
        capsys, "simulate", "add", "--base", fixture_dir / "base.emb1",
        "--pool", fixture_dir / "pool.emb1", "--eval", fixture_dir / "eval.emb1",
        "--indicator", "metric", "--budget", pool.n_samples, "--rounds", 1,
        "--epochs", 30, "--out-dir", out,
    )
    assert code == 0, err
    finals = {}
    for arm in ("hid", "lid", "random"):
        rounds = json.loads((out / f"{arm}.json").read_text())["curve"]["rounds"]
        finals[arm] = (rounds[-1]["train_size"], rounds[-1]["accuracy"])
    assert finals["hid"] == finals["lid"] == finals["random"]


def test_simulate_reduce_sizes(fixture_dir, tmp_path, capsys):
    out = tmp_path / "sim_red"
    code, _, err = run(
        capsys, "simulate", "reduce", "--train", fixture_dir / "train.emb1",
        "--eval", fixture_dir / "eval.emb1", "--indicator", "distance-entropy",
        "--budget", 12, "--rounds", 4, "--epochs", 30, "--out-dir", out,
    )
    assert code == 0, err
    rows = (out / "hid.csv").read_text().splitlines()[2:]
    sizes = [int(r.split(",")[1]) for r in rows]
    assert sizes == [120, 108, 96, 84, 72]


def test_split_partition_and_remerge(fixture_dir, tmp_path, capsys):
    out = tmp_path / "split"
    code, _, err = run(
        capsys, "split", "--train", fixture_dir / "train.emb1",
        "--test", fixture_dir / "test.emb1", "--fraction", "0.4", "--out-dir", out,
    )
    assert code == 0, err
    train = load_table(fixture_dir / "train.emb1")
    pos = load_table(out / "positive.emb1")
    neg = load_table(out / "negative.emb1")
    assert pos.n_samples + neg.n_samples == train.n_samples
    remerged = merge(pos, neg)
    assert np.array_equal(remerged.sample_ids, train.sample_ids)
    assert np.array_equal(remerged.features, train.features)
    manifest = json.loads((out / "split.json").read_text())
    assert manifest["split"]["positive_fraction"] == 0.4
    per_class = 40
    assert len(manifest["split"]["positive_ids"]) == 3 * int(0.4 * per_class)


def test_split_fraction_zero_exit_2(fixture_dir, tmp_path, capsys):
    code, _, err = run(capsys, "split", "--train", fixture_dir / "train.emb1",
                       "--test", fixture_dir / "test.emb1", "--fraction", "0",
                       "--out-dir", tmp_path / "x")
    assert code == 2
    assert json.loads(err)["error"]["code"] == "INVALID_ARGUMENT"


def test_eval_train_equals_test_separable(tmp_path, capsys):
    rng = np.random.default_rng(0)
    feats = np.vstack([rng.normal(size=(20, 4)) - 8, rng.normal(size=(20, 4)) + 8]).astype(np.float32)
    labels = np.repeat([0, 1], 20)
    t = make_table(np.arange(40), labels, feats, 2)
    path = tmp_path / "sep.emb1"
    save_table(t, path)
    out = tmp_path / "report.json"
    code, _, err = run(capsys, "eval", "--train", path, "--test", path,
                       "--epochs", 200, "--out", out)
    assert code == 0, err
    report = json.loads(out.read_text())
    assert report["test_accuracy"] == 1.0


def test_eval_repeats_reports_mean_std(fixture_dir, tmp_path, capsys):
    out = tmp_path / "report.json"
    code, _, err = run(capsys, "eval", "--train", fixture_dir / "base.emb1",
                       "--test", fixture_dir / "eval.emb1", "--repeats", 3,
                       "--epochs", 20, "--out", out)
    assert code == 0, err
    report = json.loads(out.read_text())
    assert len(report["accuracies"]) == 3
    assert report["mean"] == pytest.approx(np.mean(report["accuracies"]))
    assert report["std"] == pytest.approx(np.std(report["accuracies"]))


def test_stats_table_summary(fixture_dir, tmp_path, capsys):
    out = tmp_path / "stats.json"
    code, _, err = run(capsys, "stats", "--in", fixture_dir / "train.emb1", "--out", out)
    assert code == 0, err
    body = json.loads(out.read_text())
    assert body["table"]["n_samples"] == 120
    assert body["table"]["n_classes"] == 3
    assert body["table"]["has_logits"] is True


def test_stats_requires_exactly_one_input(tmp_path, capsys):
    code, _, err = run(capsys, "stats")
    assert code == 2


def test_convert_roundtrip(fixture_dir, tmp_path, capsys):
    csv_path = tmp_path / "t.csv"
    emb_path = tmp_path / "t.emb1"
    assert run(capsys, "convert", "--in", fixture_dir / "base.emb1", "--out", csv_path)[0] == 0
    assert run(capsys, "convert", "--in", csv_path, "--out", emb_path, "--domain-tag", "base")[0] == 0
    a = load_table(fixture_dir / "base.emb1")
    b = load_table(emb_path)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.sample_ids, b.sample_ids)
    assert np.array_equal(a.logits, b.logits)


def test_outputs_do_not_mutate_inputs(fixture_dir, tmp_path, capsys):
    before = (fixture_dir / "pool.emb1").read_bytes()
    run(capsys, "score", "--in", fixture_dir / "pool.emb1", "--indicator", "metric",
        "--out", tmp_path / "s.csv")
    assert (fixture_dir / "pool.emb1").read_bytes() == before


def test_replay_from_embedded_config(fixture_dir, tmp_path, capsys):
    out = tmp_path / "s.csv"
    assert run(capsys, "score", "--in", fixture_dir / "pool.emb1",
               "--indicator", "distance-entropy", "--out", out)[0] == 0
    first = out.read_bytes()
    embedded = json.loads(out.read_text().splitlines()[0][2:])
    cfg_path = tmp_path / "replay.json"
    cfg_path.write_text(json.dumps(embedded))
    out.unlink()
    assert run(capsys, "score", "--config", cfg_path)[0] == 0
    assert out.read_bytes() == first


def test_json_summary_mode(fixture_dir, tmp_path, capsys):
    code, out_text, _ = run(capsys, "stats", "--in", fixture_dir / "base.emb1",
                            "--out", tmp_path / "x.json", "--json")
    assert code == 0
    summary = json.loads(out_text)
    assert summary["ok"] is True and summary["command"] == "stats"


def test_module_entrypoint_subprocess(tmp_path):
    result = subprocess.run(
        [sys.executable, "-m", "infokit", "gen-fixture", "--classes", "2", "--dim", "4",
         "--per-class", "10", "--eval-per-class", "5", "--out-dir", str(tmp_path / "fx"), "--json"],
        capture_output=True, text=True,
    )
    assert result.returncode == 0, result.stderr
    assert json.loads(result.stdout)["ok"] is True
    result = subprocess.run(
        [sys.executable, "-m", "infokit", "stats", "--in", str(tmp_path / "fx" / "base.emb1")],
        capture_output=True, text=True,
    )
    assert result.returncode == 0
    assert json.loads(result.stdout)["table"]["n_samples"] == 2  # 10% of 10 per class, 2 classes
