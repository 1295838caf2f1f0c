"""Synthetic generators, contamination seeding, CSV ingestion and the experiment loop."""

from __future__ import annotations

import csv
import io
import json
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import KINDS as BASELINE_KINDS
from .baselines import BaselineKind, fit_baseline, rmse
from .density import FitOptions, detect_outliers, fit_enlarged
from .errors import ConfigError, DataError, EnlargedError
from .regression import RegData, RegParams, detect_outliers_reg, fit_enlarged_reg
from .scores import GammaScoreConfig, SampleSet

GENERATORS = ("density_synth", "reg_toy", "reg_synth_y", "reg_synth_xy", "csv_bench_y", "csv_bench_xy")
DENSITY_METHODS = ("S_power", "S_sphere", "MLE")
REG_METHODS = BASELINE_KINDS + ("S_power",)


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def _select(rng: np.random.Generator, n: int, ratio: float, selection: str) -> np.ndarray:
    if selection == "exact":
        k = int(math.floor(ratio * n))
        return np.sort(rng.permutation(n)[:k])
    if selection == "bernoulli":
        return np.flatnonzero(rng.random(n) < ratio)
    raise ValueError(f"unknown selection rule {selection!r}")


def gen_density_synth(seed, n: int, ratio: float, d: int = 2, selection: str = "exact"):
    """``N_d(0, I)`` draws with a subset replaced by per-coordinate ``N(10, 10^2)`` draws.

    ``selection="exact"`` replaces exactly ``floor(ratio * n)`` random rows;
    ``"bernoulli"`` replaces each row independently with probability ``ratio``.
    Returns ``(SampleSet, plant_indices)``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    plant = _select(rng, n, ratio, selection)
    X[plant] = rng.normal(10.0, 10.0, (plant.size, d))
    return SampleSet(X), plant


def gen_reg_toy(seed, n: int, ratio: float):
    """``y = 1 + 10 x + N(0, 1)`` with ``x ~ N(0, 1)``; outliers ``x ~ N(1, 0.8^2)``, ``y = |N(0, 70^2)|``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    y = 1.0 + 10.0 * x + rng.standard_normal(n)
    plant = _select(rng, n, ratio, "bernoulli")
    x[plant] = rng.normal(1.0, 0.8, plant.size)
    y[plant] = np.abs(rng.normal(0.0, 70.0, plant.size))
    return RegData(x[:, None], y), plant


def gen_reg_synth(seed, n: int, d: int, ratio: float, mode: str = "y_only", n_test: int = 1000):
    """Linear target with random slopes and no intercept, contaminated per sample.

    ``x ~ U[0,1]^d``, slopes ``~ N_d(0, I)``, noise variance ``1/4``.  With
    probability ``ratio`` a row gets ``y ~ N(0, 10^8)``; in ``"xy"`` mode each
    of its ``x`` coordinates is also redrawn from ``N(0, 10^4)``.  Returns
    ``(train, test, plant, true_params)``; the test set is clean.
    """
    if d < 1:
        raise ValueError("d must be at least 1")
    if mode not in ("y_only", "xy"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    theta = rng.standard_normal(d)
    x = rng.random((n, d))
    y = x @ theta + rng.normal(0.0, 0.5, n)
    plant = _select(rng, n, ratio, "bernoulli")
    y[plant] = rng.normal(0.0, 1e4, plant.size)
    if mode == "xy":
        x[plant] = rng.normal(0.0, 1e2, (plant.size, d))
    xt = rng.random((n_test, d))
    yt = xt @ theta + rng.normal(0.0, 0.5, n_test)
    truth = RegParams(theta, 0.0, 0.5)
    return RegData(x, y), RegData(xt, yt), plant, truth


def contaminate_csv(data: RegData, seed, ratio: float, mode: str = "y_only"):
    """Multiply ``y`` of Bernoulli-selected rows by ``10^4`` (and ``x`` by ``10^2`` in ``"xy"`` mode)."""
    if mode not in ("y_only", "xy"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed)
    plant = _select(rng, data.n, ratio, "bernoulli")
    x, y = data.x.copy(), data.y.copy()
    y[plant] *= 1e4
    if mode == "xy":
        x[plant] *= 1e2
    return RegData(x, y), plant


def read_numeric_csv(path) -> tuple[list, np.ndarray, int]:
    """Read a headed all-numeric CSV; returns ``(header, rows, n_dropped)``.

    Rows with a missing or non-numeric field are dropped and counted.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        rows, dropped = [], 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                dropped += 1
                continue
            if len(vals) != len(header) or not all(math.isfinite(v) for v in vals):
                dropped += 1
                continue
            rows.append(vals)
    if not rows:
        raise DataError(f"{path} has no usable rows")
    return header, np.array(rows), dropped


def load_csv(path, target_column: Optional[str] = None) -> tuple[RegData, dict]:
    """Regression data from a headed CSV; the target is the last column unless named."""
    header, A, dropped = read_numeric_csv(path)
    if len(header) < 2:
        raise DataError("CSV needs at least one feature column and a target column")
    if target_column is None:
        t = len(header) - 1
    elif target_column in header:
        t = header.index(target_column)
    else:
        raise DataError(f"target column {target_column!r} not in header")
    feats = [j for j in range(A.shape[1]) if j != t]
    meta = {"path": str(path), "rows": A.shape[0], "dropped_rows": dropped,
            "target": header[t], "features": [header[j] for j in feats]}
    return RegData(A[:, feats], A[:, t]), meta


def write_csv(path, x: np.ndarray, y: Optional[np.ndarray] = None) -> None:
    x = np.atleast_2d(x)
    cols = [f"x{j + 1}" for j in range(x.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols + (["y"] if y is not None else []))
        for i in range(x.shape[0]):
            row = [repr(float(v)) for v in x[i]]
            if y is not None:
                row.append(repr(float(y[i])))
            w.writerow(row)


# --------------------------------------------------------------------------
# experiment specification
# --------------------------------------------------------------------------


@dataclass
class ExperimentSpec:
    task: str = "regression"
    generator: str = "reg_synth_y"
    n_train: int = 100
    n_test: int = 1000
    d: int = 5
    contamination: float = 0.0
    gammas: list = field(default_factory=lambda: [0.1])
    methods: list = field(default_factory=lambda: ["L2", "S_power"])
    replications: int = 100
    seed: int = 0
    csv_path: Optional[str] = None
    target_column: Optional[str] = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in ("density", "regression"):
            raise ConfigError(f"task must be 'density' or 'regression', got {self.task!r}")
        if self.generator not in GENERATORS:
            raise ConfigError(f"unknown generator {self.generator!r}")
        if (self.task == "density") != (self.generator == "density_synth"):
            raise ConfigError(f"generator {self.generator!r} does not match task {self.task!r}")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if not 0.0 <= self.contamination < 0.5:
            raise ConfigError("contamination must lie in [0, 0.5)")
        if self.n_train < 1 or self.n_test < 0 or self.d < 1:
            raise ConfigError("n_train, d must be positive and n_test non-negative")
        if not self.gammas or any(not g > 0 for g in self.gammas):
            raise ConfigError("gammas must be a non-empty list of positive numbers")
        allowed = DENSITY_METHODS if self.task == "density" else REG_METHODS
        bad = [m for m in self.methods if m not in allowed]
        if bad or not self.methods:
            raise ConfigError(f"methods {bad or self.methods} not valid for task {self.task!r}; choose from {allowed}")
        if self.generator.startswith("csv_bench") and not self.csv_path:
            raise ConfigError("csv generators need csv_path")


_LIST_FIELDS = {"gammas": float, "methods": str}
_SCALAR_TYPES = {"n_train": int, "n_test": int, "d": int, "contamination": float,
                 "replications": int, "seed": int}


def parse_config(text: str) -> ExperimentSpec:
    """Parse the flat ``key = value`` format (``#`` comments, comma-separated lists)."""
    names = {f.name for f in fields(ExperimentSpec)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in names:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _LIST_FIELDS:
                values[key] = [_LIST_FIELDS[key](v.strip()) for v in val.split(",") if v.strip()]
            elif key in _SCALAR_TYPES:
                values[key] = _SCALAR_TYPES[key](val)
            else:
                values[key] = val
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {val!r}") from None
    return ExperimentSpec(**values)


def load_config(path) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


# --------------------------------------------------------------------------
# results
# --------------------------------------------------------------------------

CSV_COLUMNS = ("method", "gamma", "contamination", "rmse_mean", "rmse_std", "ratio_mean",
               "ratio_std", "precision", "recall", "failures", "replications")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class ResultTable:
    rows: list
    metadata: dict

    def row(self, method: str, gamma: Optional[float] = None) -> dict:
        for r in self.rows:
            if r["method"] == method and (gamma is None or r["gamma"] == gamma):
                return r
        raise KeyError((method, gamma))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and math.isnan(v):
                return None
            return v

        rows = [{k: clean(v) for k, v in r.items()} for r in self.rows]
        return json.dumps({"rows": rows, "metadata": self.metadata}, indent=2, sort_keys=True)


def design_defaults() -> dict:
    """Defaults for every choice the estimators make that the method itself leaves open."""
    fo = FitOptions()
    bk = BaselineKind("Huber")
    return {
        "fit_options": asdict(fo),
        "density_floor": 1e-300,
        "cov_eigen_floor": "1e-10 * trace / d",
        "density_start": "coordinate-wise median, MAD^2 diagonal; seeded perturbations",
        "regression_starts": "L1 + MAD scale; half-coverage LTS; best elemental subsets",
        "sigma_floor": "1e-8 * (MAD(y) + 1e-12)",
        "fallback_trigger": "c_raw > 1",
        "outlier_count_rounding": "floor(n (1 - c_hat) + 0.5)",
        "huber_k": bk.huber_k,
        "lts": {"n_subsets": bk.n_subsets, "n_csteps": bk.n_csteps, "n_refine": bk.n_refine,
                "h": "ceil(n (1 - trim_ratio))", "trim_ratio": "true contamination ratio"},
        "gemmc_scale": "1.4826 * MAD of residuals, re-estimated per iteration",
        "density_selection": "exact floor(ratio * n) rows",
        "regression_selection": "per-row Bernoulli(ratio)",
        "xy_resampling": "each x coordinate independently from N(0, 10^4)",
        "csv_standardization": "features centred/scaled by clean training-split statistics before contamination",
        "density_rmse": "RMSE of the mean estimate against the true mean 0",
    }


# --------------------------------------------------------------------------
# experiment loop
# --------------------------------------------------------------------------


def _stream(seed: int, *key) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key))


def _method_key(label: str) -> int:
    return zlib.crc32(label.encode())


def _labels(spec: ExperimentSpec) -> list[tuple[str, Optional[float]]]:
    out = []
    for m in spec.methods:
        if m in ("S_power", "S_sphere"):
            out.extend((m, float(g)) for g in spec.gammas)
        else:
            out.append((m, None))
    return out


def _precision_recall(detected, plant) -> tuple[float, float]:
    detected, plant = set(map(int, detected)), set(map(int, plant))
    hit = len(detected & plant)
    precision = hit / len(detected) if detected else math.nan
    recall = hit / len(plant) if plant else math.nan
    return precision, recall


def _standardize(train: RegData, test: RegData) -> tuple[RegData, RegData]:
    mu = train.x.mean(axis=0)
    sd = train.x.std(axis=0)
    sd[sd == 0] = 1.0
    return RegData((train.x - mu) / sd, train.y), RegData((test.x - mu) / sd, test.y)


def _replicate_data(spec: ExperimentSpec, rep: int, csv_data: Optional[RegData]):
    ss = _stream(spec.seed, rep, 0)
    if spec.generator == "density_synth":
        X, plant = gen_density_synth(ss, spec.n_train, spec.contamination, d=spec.d)
        return X, None, plant
    if spec.generator == "reg_toy":
        data, plant = gen_reg_toy(ss, spec.n_train, spec.contamination)
        rng = np.random.default_rng(_stream(spec.seed, rep, 2))
        xt = rng.standard_normal(max(spec.n_test, 3))
        test = RegData(xt[:, None], 1.0 + 10.0 * xt + rng.standard_normal(xt.size))
        return data, test, plant
    if spec.generator in ("reg_synth_y", "reg_synth_xy"):
        mode = "y_only" if spec.generator.endswith("_y") else "xy"
        train, test, plant, _ = gen_reg_synth(ss, spec.n_train, spec.d, spec.contamination, mode, spec.n_test)
        return train, test, plant
    # csv benchmarks: random train/test split, standardize, contaminate the training part
    rng = np.random.default_rng(ss)
    n_total = csv_data.n
    if spec.n_train + spec.n_test > n_total:
        raise DataError(f"CSV has {n_total} rows; need {spec.n_train + spec.n_test}")
    perm = rng.permutation(n_total)
    train = csv_data.subset(perm[: spec.n_train])
    test = csv_data.subset(perm[spec.n_train : spec.n_train + spec.n_test])
    train, test = _standardize(train, test)
    mode = "y_only" if spec.generator.endswith("_y") else "xy"
    train, plant = contaminate_csv(train, _stream(spec.seed, rep, 1), spec.contamination, mode)
    return train, test, plant


def _run_cell(spec, method, gamma, data, test, plant, seed_ss):
    """Fit one method on one replication; returns ``(rmse, ratio, precision, recall)``."""
    opts = FitOptions(seed=int(seed_ss.generate_state(1)[0]))
    if spec.task == "density":
        X = data.points
        if method == "MLE":
            mean = X.mean(axis=0)
            return float(np.sqrt(np.mean(mean**2))), math.nan, math.nan, math.nan
        cfg = GammaScoreConfig(gamma, "power" if method == "S_power" else "sphere")
        fit = fit_enlarged(data, cfg, opts)
        err = float(np.sqrt(np.mean(fit.theta_hat.mean**2)))
        p, r = _precision_recall(detect_outliers(data, fit), plant)
        return err, 1.0 - fit.c_hat, p, r
    if method == "S_power":
        fit = fit_enlarged_reg(data, gamma, opts)
        p, r = _precision_recall(detect_outliers_reg(data, fit), plant)
        return rmse(fit.theta_hat, test), 1.0 - fit.c_hat, p, r
    kind = BaselineKind(method, trim_ratio=spec.contamination if method == "LTS" else None)
    return rmse(fit_baseline(data, kind, opts), test), math.nan, math.nan, math.nan


def _mean_std(vals) -> tuple[float, float]:
    a = np.array([v for v in vals if not math.isnan(v)])
    if a.size == 0:
        return math.nan, math.nan
    return float(a.mean()), float(a.std())


def run_experiment(spec: ExperimentSpec, csv_data: Optional[RegData] = None, progress=None) -> ResultTable:
    """Run every (replication, method) cell and aggregate mean and std per method.

    Data for replication ``r`` come from stream ``(seed, r, 0)``; each method
    gets its own stream keyed by a hash of its label, so adding a method does
    not change anyone else's draws.  Fitting failures are counted, not raised.
    """
    spec.validate()
    meta_csv = None
    if spec.generator.startswith("csv_bench") and csv_data is None:
        csv_data, meta_csv = load_csv(spec.csv_path, spec.target_column)
    labels = _labels(spec)
    acc = {lab: {"rmse": [], "ratio": [], "precision": [], "recall": [], "failures": 0} for lab in labels}
    for rep in range(spec.replications):
        data, test, plant = _replicate_data(spec, rep, csv_data)
        for method, gamma in labels:
            key = f"{method}:{gamma}" if gamma is not None else method
            cell = acc[(method, gamma)]
            try:
                e, ratio, p, r = _run_cell(spec, method, gamma, data, test, plant,
                                           _stream(spec.seed, rep, 1, _method_key(key)))
            except (EnlargedError, np.linalg.LinAlgError, FloatingPointError):
                cell["failures"] += 1
                continue
            cell["rmse"].append(e)
            cell["ratio"].append(ratio)
            cell["precision"].append(p)
            cell["recall"].append(r)
        if progress is not None:
            progress(rep)
    rows = []
    for (method, gamma), cell in acc.items():
        rm, rs = _mean_std(cell["rmse"])
        cm, cs = _mean_std(cell["ratio"])
        rows.append({
            "method": method,
            "gamma": gamma,
            "contamination": spec.contamination,
            "rmse_mean": rm,
            "rmse_std": rs,
            "ratio_mean": cm,
            "ratio_std": cs,
            "precision": _mean_std(cell["precision"])[0],
            "recall": _mean_std(cell["recall"])[0],
            "failures": cell["failures"],
            "replications": spec.replications,
        })
    metadata = {"spec": asdict(spec), "defaults": design_defaults()}
    if meta_csv is not None:
        metadata["csv"] = meta_csv
    return ResultTable(rows, metadata)
