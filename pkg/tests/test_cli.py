import json
import subprocess
import sys
from pathlib import Path

import pytest

from routecast.cli import main

RUN = lambda *argv: main(list(argv))  # noqa: E731


def _gen(tmp_path, seed=7, days=6, per_day=25):
    out = tmp_path / f"gen{seed}"
    code = RUN("gen", "--seed", str(seed), "--days", str(days),
               "--per-day", str(per_day), "--out", str(out))
    assert code == 0
    return out


def _train(tmp_path, gen_dir, seed=7, trees=8, depth=3, variant="dual_weighted"):
    out = tmp_path / f"train{seed}"
    code = RUN("train", "--seed", str(seed), "--corpus", str(gen_dir / "corpus.csv"),
               "--variant", variant, "--trees", str(trees), "--depth", str(depth),
               "--out", str(out))
    assert code == 0
    return out


def test_gen_reproducible_checksums(tmp_path):
    a = _gen(tmp_path, seed=7)
    b_dir = tmp_path / "again"
    code = RUN("gen", "--seed", "7", "--days", "6", "--per-day", "25",
               "--out", str(b_dir))
    assert code == 0
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b_dir / "manifest.json").read_text())
    assert ma["outputs"]["corpus.csv"]["sha256"] == mb["outputs"]["corpus.csv"]["sha256"]


def test_gen_different_seed_differs(tmp_path):
    a = _gen(tmp_path, seed=7)
    b = _gen(tmp_path, seed=8)
    assert (a / "corpus.csv").read_bytes() != (b / "corpus.csv").read_bytes()


def test_train_writes_model_and_metrics(tmp_path):
    gen_dir = _gen(tmp_path)
    corpus_before = (gen_dir / "corpus.csv").read_bytes()
    train_dir = _train(tmp_path, gen_dir)
    assert (train_dir / "model.json").exists()
    lines = (train_dir / "metrics.csv").read_text().strip().split("\n")
    assert lines[0] == "model,set,mae,rmse,mape"
    sets = {line.split(",")[1] for line in lines[1:]}
    assert sets == {"train", "validation", "test"}
    # subcommands never mutate their inputs
    assert (gen_dir / "corpus.csv").read_bytes() == corpus_before


def test_calibrate_outputs_risk_tables(tmp_path, capsys):
    gen_dir = _gen(tmp_path)
    train_dir = _train(tmp_path, gen_dir)
    out = tmp_path / "cal"
    code = RUN("calibrate", "--seed", "7", "--corpus", str(gen_dir / "corpus.csv"),
               "--model", str(train_dir / "model.json"), "--out", str(out))
    assert code == 0
    risk = json.loads((out / "risk.json").read_text())
    assert "variance_table" in risk and "conformal_table" in risk
    printed = capsys.readouterr().out
    # buffers go out with 4 decimal places
    assert any(len(tok.split(".")[-1]) == 4 for tok in printed.split()
               if "." in tok and tok.replace(".", "").isdigit())


def _solve_setup(tmp_path):
    gen_dir = _gen(tmp_path)
    train_dir = _train(tmp_path, gen_dir)
    inst_dir = tmp_path / "inst"
    inst_dir.mkdir()
    import datetime as dt

    from routecast import datagen, seeds

    cfg = datagen.GeneratorConfig(seed=3, n_days=1, per_day_mean=10.0,
                                  window_width=480.0)
    specs = datagen.default_class_specs()
    municipalities = datagen.sample_municipalities(4, seeds.rng(3, "geo"))
    rows = datagen.generate_day_records(cfg, specs, dt.date(2025, 3, 3),
                                        seeds.rng(3, "day"), municipalities)
    inst = datagen.generate_instance(rows, datagen.FleetSpec(n_vehicles=2),
                                     seeds.rng(3, "inst"), cfg)
    path = inst_dir / "instance.json"
    inst.save(path)
    return gen_dir, train_dir, path


def test_solve_and_replay_pipeline(tmp_path):
    _gen_dir, train_dir, inst_path = _solve_setup(tmp_path)
    solve_dir = tmp_path / "solve"
    code = RUN("solve", "--seed", "5", "--instance", str(inst_path),
               "--strategy", "forecast", "--model", str(train_dir / "model.json"),
               "--population", "10", "--generations", "3", "--time-budget", "0",
               "--ls-budget", "80", "--out", str(solve_dir))
    assert code == 0
    index = json.loads((solve_dir / "pareto_index.json").read_text())
    assert index["plans"]
    assert (solve_dir / "convergence.csv").exists()
    conv_head = (solve_dir / "convergence.csv").read_text().split("\n")[0]
    assert conv_head == ("generation,best_travel,best_tardiness,best_overtime,"
                         "max_served,penalty_zero_count")
    replay_dir = tmp_path / "replay"
    code = RUN("replay", "--seed", "5", "--plan",
               str(solve_dir / index["plans"][0]["file"]),
               "--instance", str(inst_path), "--out", str(replay_dir))
    assert code == 0
    payload = json.loads((replay_dir / "replay.json").read_text())
    assert {"planned", "realized", "kpis"} <= set(payload)


def test_compare_writes_kpi_files(tmp_path):
    gen_dir = _gen(tmp_path)
    train_dir = _train(tmp_path, gen_dir)
    out = tmp_path / "cmp"
    code = RUN("compare", "--seed", "3", "--days", "2", "--per-day", "8",
               "--vehicles", "2", "--population", "8", "--generations", "2",
               "--time-budget", "0", "--ls-budget", "50",
               "--strategies", "real,default,forecast",
               "--model", str(train_dir / "model.json"), "--out", str(out))
    assert code == 0
    for s in ("real", "default", "forecast"):
        assert (out / f"kpi_daily_{s}.csv").exists()
    assert (out / "kpi_monthly.csv").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["inputs"]["model"]["sha256"]
    assert manifest["seed"] == 3


def test_compare_reproducible_and_thread_invariant(tmp_path):
    gen_dir = _gen(tmp_path)
    train_dir = _train(tmp_path, gen_dir)
    digests = []
    for tag, threads in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / f"cmp_{tag}"
        code = RUN("compare", "--seed", "9", "--days", "2", "--per-day", "6",
                   "--vehicles", "2", "--population", "8", "--generations", "2",
                   "--time-budget", "0", "--ls-budget", "40",
                   "--strategies", "real,default", "--threads", threads,
                   "--out", str(out))
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        digests.append({k: v["sha256"] for k, v in manifest["outputs"].items()})
    assert digests[0] == digests[1] == digests[2]


def test_report_renders_figures(tmp_path):
    gen_dir = _gen(tmp_path)
    train_dir = _train(tmp_path, gen_dir)
    out = tmp_path / "figs"
    code = RUN("report", "--seed", "1", "--run", str(train_dir), "--out", str(out))
    assert code == 0
    assert (out / "metrics.png").exists()
    assert (out / "importance.png").exists()
    summary = (out / "report_summary.csv").read_text()
    assert summary.startswith("figure,source")


def test_missing_file_exit_code(tmp_path, capsys):
    code = RUN("train", "--corpus", str(tmp_path / "nope.csv"),
               "--out", str(tmp_path / "o"))
    assert code == 3
    err = capsys.readouterr().err.strip()
    assert json.loads(err)["error"] == "missing-file"


def test_schema_mismatch_exit_code(tmp_path, capsys):
    bad = tmp_path / "corpus.csv"
    bad.write_text("these,are,not\nthe,right,columns\n")
    code = RUN("train", "--corpus", str(bad), "--out", str(tmp_path / "o"))
    assert code == 4
    err = capsys.readouterr().err.strip()
    assert json.loads(err)["error"] == "invalid-input"


def test_unknown_flag_exit_code(capsys):
    code = RUN("gen", "--out", "/tmp/x", "--bogus-flag", "1")
    assert code == 2
    err = capsys.readouterr().err.strip()
    assert json.loads(err)["error"] == "usage"


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"gen": {"days": 4, "per_day": 12}}))
    out = tmp_path / "gen_cfg"
    code = RUN("gen", "--seed", "2", "--config", str(cfg), "--per-day", "9",
               "--out", str(out))
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["days"] == 4        # from config file
    assert manifest["config"]["per_day"] == 9.0   # flag wins


def test_manifest_replay_reproduces_outputs(tmp_path):
    first = _gen(tmp_path, seed=13, days=4, per_day=10)
    manifest = first / "manifest.json"
    out2 = tmp_path / "replayed"
    code = RUN("gen", "--seed", "13", "--config", str(manifest), "--out", str(out2))
    assert code == 0
    assert (first / "corpus.csv").read_bytes() == (out2 / "corpus.csv").read_bytes()


def test_console_entrypoint_help():
    proc = subprocess.run(
        [sys.executable, "-m", "routecast.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    for sub in ("gen", "train", "calibrate", "solve", "replay", "compare", "report"):
        assert sub in proc.stdout
