"""Benchmark protocol: splits, fitting, conditional sampling, metrics and reports.

Every (model, run) draws its own train/validation/test split; every method in
that run sees the same split. Seeds are derived from the base seed and string
labels, so changing one method never shifts another method's random stream.
"""
from __future__ import annotations

import csv
import json
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import datagen, ddpm, gcds, series, single_index
from .exceptions import ConfigurationError, InfeasibleDimensionError, UnsupportedModelError
from .metrics import DEFAULT_N_PROJ, MetricsReport, mse_mean, mse_sd, w1_rows
from .utils import derive_seed

METHODS = ("hall_yao", "flexcode", "deepcde", "gcds", "ddpm")
ORACLE = "oracle"
METHOD_LABELS = {
    "hall_yao": "Hall & Yao",
    "flexcode": "FlexCode",
    "deepcde": "DeepCDE",
    "gcds": "GCDS",
    "ddpm": "DDPM",
    ORACLE: "Oracle",
}
METRICS = (
    ("mse_mean", "y^2"),
    ("mse_sd", "y^2"),
    ("w1", "y"),
    ("train_time_s", "s"),
    ("sample_time_s", "s"),
    ("epoch_time_s", "s"),
)
UNITS = dict(METRICS)
UNIVARIATE_ONLY = ("hall_yao", "flexcode", "deepcde")
# restarts are cut from the library default of 10 to keep desk-scale benches short
DEFAULT_HYPERPARAMETERS = {"hall_yao": {"restarts": 3}}


@dataclass
class RunConfig:
    model: str | list = "M1"
    methods: list = field(default_factory=lambda: list(METHODS))
    n_train: int = 5000
    n_val: int = 2000
    n_test: int = 2000
    n_cond_samples: int = 2000
    runs: int = 10
    base_seed: int = 0
    scale_factor: float = 1.0
    n_proj: int = DEFAULT_N_PROJ
    hyperparameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.validate()

    @property
    def model_ids(self):
        raw = self.model
        if isinstance(raw, str):
            raw = [m.strip() for m in raw.split(",") if m.strip()]
        if len(raw) == 1 and str(raw[0]).lower() == "all":
            return list(datagen.MODEL_IDS)
        return [datagen.get_model(m).name for m in raw]

    @property
    def method_list(self):
        raw = self.methods
        if isinstance(raw, str):
            raw = [m.strip() for m in raw.split(",") if m.strip()]
        raw = [str(m).lower() for m in raw]
        if raw == ["all"]:
            return list(METHODS)
        return raw

    def scaled(self, n):
        return max(1, int(round(n * self.scale_factor)))

    @property
    def sizes(self):
        return {k: self.scaled(getattr(self, k)) for k in ("n_train", "n_val", "n_test", "n_cond_samples")}

    def params_for(self, method):
        out = dict(DEFAULT_HYPERPARAMETERS.get(method, {}))
        out.update(self.hyperparameters.get(method, {}))
        return out

    def validate(self):
        if not self.model_ids:
            raise ConfigurationError("no data model given")
        methods = self.method_list
        if not methods:
            raise ConfigurationError("methods must be nonempty")
        bad = [m for m in methods if m not in METHODS + (ORACLE,)]
        if bad:
            raise ConfigurationError(
                f"unknown method(s) {', '.join(bad)}; valid: {', '.join(METHODS + (ORACLE,))}"
            )
        for name in ("n_train", "n_val", "n_test", "n_cond_samples", "runs", "n_proj"):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.scale_factor > 0:
            raise ConfigurationError("scale_factor must be positive")
        if not isinstance(self.hyperparameters, dict):
            raise ConfigurationError("hyperparameters must map method names to dicts")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class ResultRow:
    model: str
    method: str
    run: int
    metrics: MetricsReport | None = None
    epoch_time_s: float | None = None
    failure: str | None = None

    @property
    def ok(self):
        return self.failure is None

    def value(self, metric):
        if metric == "epoch_time_s":
            return self.epoch_time_s
        return getattr(self.metrics, metric)


@dataclass
class ReportTable:
    rows: list = field(default_factory=list)
    scale_factor: float = 1.0
    skipped: list = field(default_factory=list)
    aggregates: dict | None = None

    def cells(self):
        """Ordered (model, method) pairs with at least one row."""
        seen = []
        for r in self.rows:
            key = (r.model, r.method)
            if key not in seen:
                seen.append(key)
        return seen

    @property
    def failures(self):
        return [r for r in self.rows if not r.ok]

    def summary(self):
        """{(model, method): {metric: (mean, std, count)}} over completed runs."""
        if self.aggregates is not None:
            return self.aggregates
        out = {}
        for cell in self.cells():
            done = [r for r in self.rows if (r.model, r.method) == cell and r.ok]
            stats = {}
            for metric, _ in METRICS:
                vals = [r.value(metric) for r in done]
                vals = [v for v in vals if v is not None and np.isfinite(v)]
                if vals:
                    sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
                    stats[metric] = (float(np.mean(vals)), sd, len(vals))
            out[cell] = stats
        return out


def method_feasible(method, model, n_train, params=None):
    """(True, "") when the method can run on this model, else (False, reason)."""
    dm = datagen.get_model(model)
    if method in UNIVARIATE_ONLY and dm.q != 1:
        return False, f"{method} needs a univariate response ({dm.name} has q={dm.q})"
    if method == "hall_yao":
        params = params or {}
        cap = params.get("memory_cap", single_index.MEMORY_CAP_BYTES)
        if "h" in params:
            grid = single_index.SphereGrid(dm.p, params.get("grid_spacing") or params["h"])
            if dm.p > 1 and grid.memory_bytes(n_train) > cap:
                return False, f"sphere grid for p={dm.p} exceeds the memory cap"
        elif single_index.feasible_bandwidths(dm.p, n_train, memory_cap=cap) is None:
            return False, f"sphere grid for p={dm.p} exceeds the memory cap at every spacing"
    return True, ""


def _fit_hall_yao(train, val, seed, **params):
    params = dict(params)
    if "h" not in params:
        bw = single_index.feasible_bandwidths(
            train.p, train.n, memory_cap=params.get("memory_cap", single_index.MEMORY_CAP_BYTES))
        if bw is None:
            raise InfeasibleDimensionError(f"no feasible sphere grid for p={train.p}")
        params["h"] = bw.h
        params.setdefault("H", bw.H)
    return single_index.fit_method(train, val, seed, **params)


class OracleSampler:
    """Perfect sampler backed by the true conditional law."""

    epochs_run = None

    def __init__(self, model):
        self.model = datagen.get_model(model).name

    def sample_batch(self, x, n, seed=None):
        return datagen.true_cond_sample(self.model, x, n, seed)


FITTERS = {
    "hall_yao": _fit_hall_yao,
    "flexcode": series.fit_flexcode_method,
    "deepcde": series.fit_deepcde_method,
    "gcds": gcds.fit,
    "ddpm": ddpm.fit,
    ORACLE: lambda train, val, seed, **_: OracleSampler(train.model),
}


def make_splits(config: RunConfig, model, run):
    sizes = config.sizes
    seed = derive_seed(config.base_seed, model, "data", run)
    total = sizes["n_train"] + sizes["n_val"] + sizes["n_test"]
    data = datagen.generate(model, total, seed)
    a, b = sizes["n_train"], sizes["n_train"] + sizes["n_val"]
    return data.subset(slice(0, a)), data.subset(slice(a, b)), data.subset(slice(b, total))


def evaluate_samples(model, x_test, samples, ref_seed, n_proj=DEFAULT_N_PROJ, proj_seed=0):
    """MSE of sample moments against the oracle, and mean W1 to a matched reference sample."""
    samples = np.asarray(samples, dtype=np.float64)
    est_mean = samples.mean(axis=1)
    est_sd = samples.std(axis=1, ddof=1) if samples.shape[1] > 1 else np.zeros_like(est_mean)
    ref = datagen.true_cond_sample(model, x_test, samples.shape[1], ref_seed)
    return (
        mse_mean(est_mean, datagen.true_cond_mean(model, x_test)),
        mse_sd(est_sd, datagen.true_cond_std(model, x_test)),
        float(np.mean(w1_rows(samples, ref, n_proj, proj_seed))),
    )


def run_cell(config: RunConfig, model, method, run, splits=None) -> ResultRow:
    """Fit and evaluate one method on one run; errors become a marked row."""
    try:
        train, val, test = splits or make_splits(config, model, run)
        fit_seed = derive_seed(config.base_seed, model, method, run)
        sample_seed = derive_seed(config.base_seed, model, method, run, "sample")
        ref_seed = derive_seed(config.base_seed, model, "reference", run)
        proj_seed = derive_seed(config.base_seed, model, "projections", run)
        t0 = time.perf_counter()
        fitted = FITTERS[method](train, val, fit_seed, **config.params_for(method))
        train_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        samples = fitted.sample_batch(test.x, config.sizes["n_cond_samples"], sample_seed)
        sample_time = time.perf_counter() - t0
        mm, ms, w1 = evaluate_samples(model, test.x, samples, ref_seed, config.n_proj, proj_seed)
        if not all(np.isfinite([mm, ms, w1])):
            raise FloatingPointError("non-finite metric")
        epochs = getattr(fitted, "epochs_run", None)
        epoch_time = train_time / epochs if epochs else None
        return ResultRow(model, method, run, MetricsReport(mm, ms, w1, train_time, sample_time), epoch_time)
    except Exception as exc:  # noqa: BLE001 - failures are recorded, not raised
        detail = f"{type(exc).__name__}: {exc}"
        if not isinstance(exc, (InfeasibleDimensionError, UnsupportedModelError)):
            detail += " | " + traceback.format_exc(limit=2).strip().splitlines()[-1]
        return ResultRow(model, method, run, failure=detail)


def _worker(args):
    cfg_dict, model, method, run = args
    return run_cell(RunConfig.from_dict(cfg_dict), model, method, run)


def plan_cells(config: RunConfig):
    """Runnable (model, method) pairs and the gated-out ones with reasons."""
    todo, skipped = [], []
    n_train = config.sizes["n_train"]
    for model in config.model_ids:
        for method in config.method_list:
            ok, why = (True, "") if method == ORACLE else method_feasible(
                method, model, n_train, config.params_for(method))
            (todo if ok else skipped).append((model, method) if ok else (model, method, why))
    return todo, skipped


def worker_count():
    raw = os.environ.get("CDE_BENCH_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError as exc:
        raise ConfigurationError(f"CDE_BENCH_THREADS must be an integer, got {raw!r}") from exc


def run_experiment(config: RunConfig, progress=None) -> ReportTable:
    """Run every feasible (model, method) cell for ``config.runs`` runs."""
    config.validate()
    todo, skipped = plan_cells(config)
    models = list(dict.fromkeys(m for m, _ in todo))
    jobs = [(model, method, r) for model in models for r in range(config.runs)
            for m2, method in todo if m2 == model]
    workers = min(worker_count(), max(1, len(jobs)))
    rows = []
    if workers == 1:
        splits = {}
        for model, method, r in jobs:
            if (model, r) not in splits:
                splits = {(model, r): make_splits(config, model, r)}
            row = run_cell(config, model, method, r, splits[(model, r)])
            rows.append(row)
            if progress:
                progress(row)
    else:
        cfg = config.to_dict()
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for row in pool.map(_worker, [(cfg, *job) for job in jobs]):
                rows.append(row)
                if progress:
                    progress(row)
    order = {cell: i for i, cell in enumerate(todo)}
    rows.sort(key=lambda r: (order[(r.model, r.method)], r.run))
    return ReportTable(rows, config.scale_factor, skipped)


# -- reports -----------------------------------------------------------------

CSV_HEADER = ["model", "method", "metric", "mean", "std", "unit"]
RUNS_HEADER = ["model", "method", "run", "mse_mean", "mse_sd", "w1", "train_time_s",
               "sample_time_s", "epoch_time_s", "failure"]


def _fmt(v):
    return "" if v is None else repr(float(v))


def emit_csv(table: ReportTable, path):
    """Aggregated metrics in long form."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for (model, method), stats in table.summary().items():
            for metric, unit in METRICS:
                if metric in stats:
                    mean, sd, _ = stats[metric]
                    w.writerow([model, method, metric, _fmt(mean), _fmt(sd), unit])


def read_csv(path):
    """Inverse of :func:`emit_csv`."""
    out = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.setdefault((rec["model"], rec["method"]), {})[rec["metric"]] = (
                float(rec["mean"]), float(rec["std"]))
    return out


def emit_runs_csv(table: ReportTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUNS_HEADER)
        for r in table.rows:
            m = r.metrics
            vals = [None] * 5 if m is None else [m.mse_mean, m.mse_sd, m.w1, m.train_time_s, m.sample_time_s]
            w.writerow([r.model, r.method, r.run] + [_fmt(v) for v in vals]
                       + [_fmt(r.epoch_time_s), r.failure or ""])


def read_runs_csv(path, scale_factor=1.0) -> ReportTable:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            get = lambda k: float(rec[k]) if rec[k] else None  # noqa: E731
            if rec["failure"]:
                rows.append(ResultRow(rec["model"], rec["method"], int(rec["run"]), failure=rec["failure"]))
            else:
                metrics = MetricsReport(get("mse_mean"), get("mse_sd"), get("w1"),
                                        get("train_time_s"), get("sample_time_s"))
                rows.append(ResultRow(rec["model"], rec["method"], int(rec["run"]), metrics,
                                      get("epoch_time_s")))
    return ReportTable(rows, scale_factor)


def _cell_text(stats, metric, digits):
    if metric not in stats:
        return "--"
    mean, sd, _ = stats[metric]
    return f"{mean:.{digits}f} ({sd:.{digits}f})"


def emit_markdown(table: ReportTable, path):
    """Benchmark table layout: one row per (model, method), values as mean (std)."""
    lines = [
        f"Scale factor: {table.scale_factor:g}. Values are mean (std) over completed runs; times in seconds.",
        "",
        "| Model | Method | MSE Mean | MSE Std | W-1 | Training Time | Sampling Time | Epoch Time |",
        "|---|---|---|---|---|---|---|---|",
    ]
    last_model = None
    for (model, method), stats in table.summary().items():
        label = model if model != last_model else ""
        last_model = model
        lines.append("| " + " | ".join([
            label, METHOD_LABELS.get(method, method),
            _cell_text(stats, "mse_mean", 4), _cell_text(stats, "mse_sd", 4), _cell_text(stats, "w1", 4),
            _cell_text(stats, "train_time_s", 1), _cell_text(stats, "sample_time_s", 1),
            _cell_text(stats, "epoch_time_s", 4),
        ]) + " |")
    if table.failures:
        lines += ["", "Failed runs:", ""]
        lines += [f"- {r.model} / {r.method} / run {r.run}: {r.failure}" for r in table.failures]
    if table.skipped:
        lines += ["", "Not run (infeasible):", ""]
        lines += [f"- {m} / {meth}: {why}" for m, meth, why in table.skipped]
    Path(path).write_text("\n".join(lines) + "\n")


def write_reports(table: ReportTable, out_dir, config: RunConfig | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    emit_csv(table, out / "results.csv")
    emit_markdown(table, out / "results.md")
    emit_runs_csv(table, out / "runs.csv")
    if config is not None:
        meta = config.to_dict()
        meta["sizes"] = config.sizes
        meta["skipped"] = [list(s) for s in table.skipped]
        (out / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return out


def density_grid_rows(model, n_points=4, seed=0, y_points=datagen.DENSITY_GRID_POINTS):
    """Long-form true conditional densities at random predictor draws (figure data)."""
    dm = datagen.get_model(model)
    xs = datagen.generate(dm, n_points, seed).x
    rows = []
    for i, x in enumerate(xs):
        grid = datagen.default_y_grid(dm, x, y_points)
        dens = datagen.true_density_grid(dm, x, grid)
        dens = np.asarray(dens).ravel()
        for y, f in zip(grid, dens):
            rows.append([i, *x.tolist(), float(y), float(f)])
    header = ["point"] + [f"x{j + 1}" for j in range(dm.p)] + ["y", "density"]
    return header, rows

