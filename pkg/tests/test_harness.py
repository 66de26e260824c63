import json

import numpy as np
import pytest

from cdebench import harness
from cdebench.exceptions import ConfigurationError
from cdebench.metrics import MetricsReport

FAST = {
    "gcds": {"epochs": 3},
    "ddpm": {"epochs": 2, "T": 50},
    "deepcde": {"max_epochs": 3},
    "flexcode": {"n_estimators": 10},
    "hall_yao": {"restarts": 1},
}


def tiny(**kw):
    base = dict(model="M1", methods=["gcds"], n_train=200, n_val=100, n_test=20, n_cond_samples=50,
                runs=1, base_seed=5, hyperparameters=FAST)
    base.update(kw)
    return harness.RunConfig(**base)


def metric_values(table):
    return [(r.model, r.method, r.run, r.metrics.mse_mean, r.metrics.mse_sd, r.metrics.w1) for r in table.rows]


def test_single_method_table(tmp_path):
    table = harness.run_experiment(tiny())
    assert len(table.rows) == 1 and table.rows[0].ok
    harness.emit_csv(table, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "model,method,metric,mean,std,unit"
    assert [ln.split(",")[2] for ln in lines[1:]] == [m for m, _ in harness.METRICS]


def test_runs_are_deterministic():
    cfg = tiny(methods=["gcds", "ddpm"], runs=2)
    assert metric_values(harness.run_experiment(cfg)) == metric_values(harness.run_experiment(cfg))


def test_seed_isolation():
    a = harness.run_experiment(tiny(methods=["gcds", "ddpm"]))
    hp = {**FAST, "gcds": {"epochs": 5, "lr_gen": 1e-3}}
    b = harness.run_experiment(tiny(methods=["gcds", "ddpm"], hyperparameters=hp))
    ddpm_a = [v for v in metric_values(a) if v[1] == "ddpm"]
    ddpm_b = [v for v in metric_values(b) if v[1] == "ddpm"]
    assert ddpm_a == ddpm_b
    assert [v for v in metric_values(a) if v[1] == "gcds"] != [v for v in metric_values(b) if v[1] == "gcds"]


def test_feasibility_gating_matches_table_layout():
    cfg = harness.RunConfig(model="all", methods="all", scale_factor=0.2)
    todo, skipped = harness.plan_cells(cfg)
    assert len(todo) == 45
    absent = {(m, meth) for m, meth, _ in skipped}
    assert {("M7", "hall_yao"), ("M8", "hall_yao"), ("M10", "hall_yao")} <= absent
    assert {("M10", "flexcode"), ("M10", "deepcde")} <= absent
    assert len(absent) == 5
    # full-size sample sizes do not change the gating
    todo_full, _ = harness.plan_cells(harness.RunConfig(model="all", methods="all"))
    assert todo_full == todo


def test_failure_is_marked_and_other_runs_continue(monkeypatch):
    calls = []

    def flaky(train, val, seed, **params):
        calls.append(seed)
        if len(calls) == 1:
            raise RuntimeError("boom")
        return harness.OracleSampler(train.model)

    monkeypatch.setitem(harness.FITTERS, "gcds", flaky)
    table = harness.run_experiment(tiny(runs=3))
    assert [r.ok for r in table.rows] == [False, True, True]
    assert "boom" in table.rows[0].failure
    stats = table.summary()[("M1", "gcds")]
    assert stats["w1"][2] == 2


def test_emitters(tmp_path):
    empty = harness.ReportTable()
    harness.emit_csv(empty, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == "model,method,metric,mean,std,unit\n"

    rows = []
    rng = np.random.default_rng(0)
    for model in ("M1", "M6"):
        for method in ("gcds", "ddpm", "flexcode"):
            for r in range(3):
                rows.append(harness.ResultRow(model, method, r, MetricsReport(*rng.uniform(size=5)),
                                              None if method == "flexcode" else float(rng.uniform())))
    table = harness.ReportTable(rows, 0.2)
    harness.emit_csv(table, tmp_path / "t.csv")
    parsed = harness.read_csv(tmp_path / "t.csv")
    for cell, stats in table.summary().items():
        for metric, (mean, sd, _) in stats.items():
            assert parsed[cell][metric] == (mean, sd)
    assert "epoch_time_s" not in parsed[("M1", "flexcode")]

    harness.emit_markdown(table, tmp_path / "t.md")
    text = (tmp_path / "t.md").read_text()
    body = [ln for ln in text.splitlines() if ln.startswith("| ") and not ln.startswith("| Model")]
    assert len(body) == 6
    assert "Scale factor: 0.2" in text
    harness.emit_markdown(table, tmp_path / "t2.md")
    assert (tmp_path / "t2.md").read_bytes() == (tmp_path / "t.md").read_bytes()


def test_runs_csv_round_trip(tmp_path):
    table = harness.run_experiment(tiny(methods=["gcds", "oracle"], runs=2))
    table.rows.append(harness.ResultRow("M1", "gcds", 2, failure="TrainingError: x"))
    harness.emit_runs_csv(table, tmp_path / "runs.csv")
    back = harness.read_runs_csv(tmp_path / "runs.csv")
    assert back.summary() == table.summary()
    assert len(back.failures) == 1


def test_config_json(tmp_path):
    cfg = tiny(methods=["ddpm"], scale_factor=0.5)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = harness.RunConfig.from_json(path)
    assert back == cfg
    assert back.sizes == {"n_train": 100, "n_val": 50, "n_test": 10, "n_cond_samples": 25}
    path.write_text(json.dumps({"model": "M1", "bogus": 1}))
    with pytest.raises(ConfigurationError, match="bogus"):
        harness.RunConfig.from_json(path)


@pytest.mark.parametrize("kw", [dict(model="M0"), dict(methods=["nope"]), dict(methods=[]), dict(runs=0),
                                dict(scale_factor=0.0)])
def test_invalid_configs(kw):
    with pytest.raises(ConfigurationError):
        tiny(**kw)


def test_parallel_matches_sequential(monkeypatch):
    cfg = tiny(methods=["gcds", "oracle"], runs=2)
    seq = harness.run_experiment(cfg)
    monkeypatch.setenv("CDE_BENCH_THREADS", "2")
    par = harness.run_experiment(cfg)
    assert metric_values(seq) == metric_values(par)


def test_ddpm_samples_slower_than_gcds():
    cfg = tiny(methods=["gcds", "ddpm"], hyperparameters={"gcds": {"epochs": 1}, "ddpm": {"epochs": 1}})
    table = harness.run_experiment(cfg)
    times = {r.method: r.metrics.sample_time_s for r in table.rows}
    assert times["ddpm"] > times["gcds"]


def test_density_grid_rows():
    header, rows = harness.density_grid_rows("M6", n_points=2, seed=0, y_points=11)
    assert header == ["point", "x1", "x2", "x3", "x4", "x5", "y", "density"]
    assert len(rows) == 22


def test_write_reports(tmp_path):
    cfg = tiny(methods=["oracle"])
    table = harness.run_experiment(cfg)
    out = harness.write_reports(table, tmp_path / "res", cfg)
    for name in ("results.csv", "results.md", "runs.csv", "config.json"):
        assert (out / name).exists()
    meta = json.loads((out / "config.json").read_text())
    assert meta["scale_factor"] == 1.0 and meta["sizes"]["n_train"] == 200
