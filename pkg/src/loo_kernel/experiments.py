"""Desk-scale sweeps comparing leave-one-out estimates with held-out test metrics.

A sweep runs one job per (grid value, repeat). Jobs are independent and seed
themselves from ``(cfg.seed, component, knob, repeat)``, so results do not
depend on execution order or on the number of worker processes.

Loss scales: leave-one-out losses use the unhalved squared residual, while
the per-point test loss carries a factor 1/2. Records therefore store
``test_loss`` and ``train_loss`` doubled, next to the raw values.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .dataio import (
    Dataset,
    NoiseSpec,
    load_csv,
    load_feature_matrix,
    randomize_labels,
    standardize,
    synth_blobs,
    train_test_split,
)
from .errors import ConfigError, DomainError
from .kernels import (
    KernelMatrix,
    KernelSpec,
    feature_gram,
    gram,
    linear_kernel,
    linearization_feature_map,
    random_feature_map,
)
from .loo import loo_noisy, loo_regularized, loo_zero_reg
from .regression import eigendecompose, eval_metrics, fit, predict
from .seeding import derive_seed

SWEEP_FAMILIES = ("sample-size", "noise", "width", "rank", "depth", "transfer")
RANK_VARIANTS = ("depth1", "depth2-m1", "depth2-m2", "linearization-m1", "linearization-m2")
CSV_HEADER = (
    "knob",
    "repeat",
    "seed",
    "loo_loss",
    "loo_acc",
    "test_loss",
    "test_acc",
    "train_loss",
    "kernel_rank",
    "flagged_points",
)
METRICS = ("loo_loss", "loo_acc", "test_loss", "test_acc", "train_loss", "kernel_rank", "flagged_points")


@dataclass
class SweepRecord:
    knob: float
    repeat: int
    seed: int
    loo_loss: float
    loo_acc: float
    test_loss: float
    test_acc: float
    train_loss: float
    kernel_rank: int
    flagged_points: int
    n_train: int = 0
    test_loss_raw: float = math.nan
    train_loss_raw: float = math.nan
    seen_test_data: bool = False

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, name)) for name in CSV_HEADER]


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class SweepConfig:
    """One sweep. ``data`` describes the source, see :func:`load_source`."""

    family: str
    grid: tuple[float, ...]
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec("ntk", depth=3))
    lam: float = 0.0
    repeats: int = 5
    seed: int = 0
    data: dict = field(default_factory=dict)
    test_fraction: float = 0.2
    n_train: int | None = None
    label_noise: float = 0.0
    standardize: bool = False
    variant: str = "depth1"
    fixed_width: int | None = None

    def __post_init__(self):
        if self.family not in SWEEP_FAMILIES:
            raise ConfigError(f"family: unknown sweep family {self.family!r}")
        grid = tuple(float(g) for g in self.grid)
        object.__setattr__(self, "grid", grid)
        if not grid:
            raise ConfigError("grid: must be nonempty")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise ConfigError("grid: must be strictly increasing")
        if self.repeats < 1:
            raise ConfigError("repeats: must be >= 1")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ConfigError("lambda: must be finite and >= 0")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigError("label_noise: must lie in [0, 1]")
        if self.variant not in RANK_VARIANTS:
            raise ConfigError(f"variant: must be one of {RANK_VARIANTS}")
        if self.family == "rank" and self.variant != "depth1" and not self.fixed_width:
            raise ConfigError("fixed_width: required for two-layer rank variants")
        if self.family in ("sample-size", "width", "rank", "depth") and any(
            g < 1 or not float(g).is_integer() for g in grid
        ):
            raise ConfigError("grid: values must be positive integers for this family")
        if self.family == "noise" and any(not 0 <= g <= 1 for g in grid):
            raise ConfigError("grid: noise levels must lie in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict) -> SweepConfig:
        """Build from parsed JSON, raising ConfigError with the offending field."""
        if not isinstance(raw, dict):
            raise ConfigError("config: top level must be a JSON object")
        known = {f.name for f in fields(cls)} | {"lambda"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown field")
        for required in ("family", "grid"):
            if required not in raw:
                raise ConfigError(f"{required}: missing required field")
        if not isinstance(raw["grid"], list) or not all(
            isinstance(g, (int, float)) and not isinstance(g, bool) for g in raw["grid"]
        ):
            raise ConfigError("grid: must be a list of numbers")
        kw: dict[str, Any] = {k: v for k, v in raw.items() if k not in ("kernel", "lambda")}
        if "lambda" in raw:
            kw["lam"] = raw["lambda"]
        typed = {
            "lam": (int, float),
            "repeats": int,
            "seed": int,
            "test_fraction": (int, float),
            "label_noise": (int, float),
            "standardize": bool,
            "variant": str,
            "data": dict,
            "family": str,
        }
        for name, typ in typed.items():
            if name in kw and (not isinstance(kw[name], typ) or (typ is int and isinstance(kw[name], bool))):
                raise ConfigError(f"{'lambda' if name == 'lam' else name}: wrong type {type(kw[name]).__name__}")
        for name in ("n_train", "fixed_width"):
            if kw.get(name) is not None and (not isinstance(kw[name], int) or kw[name] < 1):
                raise ConfigError(f"{name}: must be a positive integer")
        if "kernel" in raw:
            k = raw["kernel"]
            if not isinstance(k, dict):
                raise ConfigError("kernel: must be an object")
            try:
                kw["kernel"] = KernelSpec(
                    family=k.get("family", "ntk"),
                    depth=int(k.get("depth", 1)),
                    nonlinearity=k.get("nonlinearity", "relu"),
                    widths=tuple(k.get("widths", ())),
                    seed=int(k.get("seed", 0)),
                )
            except (DomainError, TypeError, ValueError) as exc:
                raise ConfigError(f"kernel: {exc}") from None
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out["grid"] = list(self.grid)
        out["kernel"]["widths"] = list(self.kernel.widths)
        return out


def load_source(cfg: SweepConfig) -> tuple[Dataset, Dataset]:
    """Training pool and held-out test set described by ``cfg.data``.

    Kinds: ``blobs`` (``n``, ``d``, ``classes``, ``separation``), ``csv``
    (``path``, ``classes``, ``layout``, ``header``) and ``features`` (``train``
    and ``test`` objects with ``features`` and ``labels`` paths, plus
    ``classes``). Sources other than ``features`` are split with
    ``cfg.test_fraction`` before any subsampling.
    """
    data = dict(cfg.data)
    kind = data.get("kind", "blobs")
    try:
        if kind == "blobs":
            ds = synth_blobs(
                int(data.get("n", 1000)),
                int(data.get("d", 20)),
                int(data.get("classes", 2)),
                float(data.get("separation", 3.0)),
                seed=derive_seed(cfg.seed, "data"),
            )
        elif kind == "csv":
            ds = load_csv(
                data["path"],
                int(data["classes"]),
                data.get("layout", "label-first"),
                header=bool(data.get("header", False)),
            )
        elif kind == "features":
            C = int(data["classes"])
            train = load_feature_matrix(data["train"]["features"], data["train"]["labels"], C)
            test = load_feature_matrix(data["test"]["features"], data["test"]["labels"], C)
            return standardize(train, test) if cfg.standardize else (train, test)
        else:
            raise ConfigError(f"data.kind: unknown source kind {kind!r}")
    except KeyError as exc:
        raise ConfigError(f"data.{exc.args[0]}: missing required field") from None
    train, test = train_test_split(ds, cfg.test_fraction, derive_seed(cfg.seed, "split"))
    return standardize(train, test) if cfg.standardize else (train, test)


def default_width_grid(n: int, low: float = 1 / 8, high: float = 8.0) -> list[int]:
    """Geometric widths from ``low * n`` to ``high * n`` refined around ``n``."""
    root = math.sqrt(n)
    points = [n * low, n / 4, n / 2, 3 * n / 4, n - root, n, n + root, 2 * n, 4 * n, n * high]
    return sorted({max(1, int(round(p))) for p in points if n * low <= p <= n * high})


def _subsample(pool: Dataset, size: int | None, seed: int) -> Dataset:
    if size is None or size == pool.n:
        return pool
    if size > pool.n:
        raise ConfigError(f"grid/n_train: {size} training points requested, only {pool.n} available")
    idx = np.sort(np.random.default_rng(seed).choice(pool.n, size=size, replace=False))
    return pool.subset(idx)


def evaluate(
    K: KernelMatrix,
    Y_train,
    Y_test,
    lam: float,
    Y_train_clean=None,
) -> dict:
    """Leave-one-out, train and test metrics for one kernel.

    With ``Y_train_clean`` the leave-one-out predictions of the model trained
    on ``Y_train`` are scored against the clean labels.
    """
    eig = eigendecompose(K.values)
    if Y_train_clean is not None:
        report = loo_noisy(eig, Y_train, Y_train_clean, lam, K=K.values if lam > 0 else None)
    elif lam > 0:
        report = loo_regularized(K.values, Y_train, lam, eig=eig)
    else:
        report = loo_zero_reg(eig, Y_train)
    model = fit(K.values, Y_train, lam, eig=eig)
    train_raw, _ = eval_metrics(predict(model, K.values), Y_train)
    test_raw, test_acc = eval_metrics(predict(model, K.cross_block), Y_test)
    return {
        "loo_loss": report.loss,
        "loo_acc": report.accuracy,
        "test_loss": 2 * test_raw,
        "test_acc": test_acc,
        "train_loss": 2 * train_raw,
        "kernel_rank": eig.rank,
        "flagged_points": len(report.flagged_points),
        "n_train": eig.n,
        "test_loss_raw": test_raw,
        "train_loss_raw": train_raw,
    }


def _rank_kernel(cfg: SweepConfig, X_train, X_test, knob: int, seed: int) -> KernelMatrix:
    fixed = cfg.fixed_width
    variant = cfg.variant
    if variant == "depth1":
        widths = (knob,)
    elif variant.endswith("-m1"):
        widths = (knob, fixed)
    else:
        widths = (fixed, knob)
    if variant.startswith("linearization"):
        phi = linearization_feature_map(X_train, widths, seed=seed)
        phi_t = linearization_feature_map(X_test, widths, seed=seed)
    else:
        spec = KernelSpec("random-feature", depth=len(widths) + 1, widths=widths, seed=seed)
        phi, phi_t = random_feature_map(X_train, spec), random_feature_map(X_test, spec)
    return KernelMatrix(feature_gram(phi), feature_gram(phi_t, phi))


def run_job(cfg: SweepConfig, pool: Dataset, test: Dataset, knob: float, repeat: int) -> SweepRecord:
    """Compute one record; a pure function of its arguments."""
    seed = derive_seed(cfg.seed, cfg.family, knob, repeat)
    family = cfg.family
    size = int(knob) if family == "sample-size" else cfg.n_train
    train = _subsample(pool, size, derive_seed(cfg.seed, "subsample", size, repeat))
    Y_train, clean = train.targets, None
    noise = knob if family == "noise" else cfg.label_noise
    if noise > 0 or family == "noise":
        noisy, _ = randomize_labels(train, NoiseSpec(noise, derive_seed(cfg.seed, "noise", knob, repeat)))
        Y_train = noisy.targets
        # label noise in the width sweep is the random-label double-descent setting:
        # leave-one-out is scored on the labels the model was trained on
        clean = train.targets if family == "noise" else None
    if family == "width":
        spec = KernelSpec("random-feature", depth=2, widths=(int(knob),), seed=seed)
        K = gram(spec, train.inputs, test.inputs)
    elif family == "rank":
        K = _rank_kernel(cfg, train.inputs, test.inputs, int(knob), seed)
    elif family == "depth":
        K = gram(replace(cfg.kernel, depth=int(knob)), train.inputs, test.inputs)
    else:
        K = gram(cfg.kernel, train.inputs, test.inputs)
    try:
        metrics = evaluate(K, Y_train, test.targets, cfg.lam, Y_train_clean=clean)
    except DomainError as exc:
        if family == "noise":
            raise ConfigError(f"noise sweep at knob {knob}: {exc}") from None
        raise
    return SweepRecord(knob=float(knob), repeat=repeat, seed=seed, **metrics)


def _job(args):
    return run_job(*args)


def run_sweep(cfg: SweepConfig, jobs: int = 1, source=None) -> list[SweepRecord]:
    """Run every (knob, repeat) job; output sorted by knob then repeat."""
    if cfg.family == "transfer":
        pool, test = load_source(cfg) if source is None else source
        return [run_transfer_eval(pool, test, cfg.lam)]
    pool, test = load_source(cfg) if source is None else source
    if cfg.family == "sample-size" and max(cfg.grid) > pool.n:
        raise ConfigError(f"grid: {int(max(cfg.grid))} exceeds the {pool.n} available training points")
    tasks = [(cfg, pool, test, knob, r) for knob in cfg.grid for r in range(cfg.repeats)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            records = list(ex.map(_job, tasks))
    else:
        records = [_job(t) for t in tasks]
    return sorted(records, key=lambda r: (r.knob, r.repeat))


def _check_family(cfg: SweepConfig, family: str):
    if cfg.family != family:
        raise ConfigError(f"family: expected {family!r}, got {cfg.family!r}")


def run_sample_size_sweep(cfg: SweepConfig, jobs: int = 1, source=None) -> list[SweepRecord]:
    _check_family(cfg, "sample-size")
    return run_sweep(cfg, jobs, source)


def run_noise_sweep(cfg: SweepConfig, jobs: int = 1, source=None) -> list[SweepRecord]:
    _check_family(cfg, "noise")
    return run_sweep(cfg, jobs, source)


def run_width_sweep(cfg: SweepConfig, jobs: int = 1, source=None) -> list[SweepRecord]:
    _check_family(cfg, "width")
    return run_sweep(cfg, jobs, source)


def run_rank_sweep(cfg: SweepConfig, jobs: int = 1, source=None) -> list[SweepRecord]:
    _check_family(cfg, "rank")
    return run_sweep(cfg, jobs, source)


def run_depth_sweep(cfg: SweepConfig, jobs: int = 1, source=None) -> list[SweepRecord]:
    _check_family(cfg, "depth")
    return run_sweep(cfg, jobs, source)


def run_transfer_eval(features_train: Dataset, features_test: Dataset, lam: float) -> SweepRecord:
    """Top-layer retraining on exported features: linear kernel, LOO on train, test on held-out."""
    if features_train.d != features_test.d or features_train.C != features_test.C:
        raise ConfigError(
            f"feature shapes differ: train d={features_train.d}, C={features_train.C}; "
            f"test d={features_test.d}, C={features_test.C}"
        )
    K = KernelMatrix(
        linear_kernel(features_train.inputs), linear_kernel(features_test.inputs, features_train.inputs)
    )
    metrics = evaluate(K, features_train.targets, features_test.targets, lam)
    seen = features_train.inputs.shape == features_test.inputs.shape and bool(
        np.array_equal(features_train.inputs, features_test.inputs)
    )
    return SweepRecord(knob=float(lam), repeat=0, seed=0, seen_test_data=seen, **metrics)


def aggregate(records: list[SweepRecord], metric: str, how: str = "median") -> tuple[list[float], list[float]]:
    """Per-knob aggregate of one metric, knobs ascending."""
    knobs = sorted({r.knob for r in records})
    fn = {"median": np.median, "mean": np.mean}[how]
    return knobs, [float(fn([getattr(r, metric) for r in records if r.knob == k])) for k in knobs]


def records_to_csv(records: list[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow(rec.csv_row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[SweepRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DomainError("unexpected CSV header")
    ints = {"repeat", "seed", "kernel_rank", "flagged_points"}
    out = []
    for row in rows[1:]:
        kw = {h: (int(v) if h in ints else float(v)) for h, v in zip(CSV_HEADER, row)}
        out.append(SweepRecord(**kw))
    return out


def summarize(records: list[SweepRecord], cfg: SweepConfig | None = None) -> dict:
    """Per-knob mean and sample standard deviation (0 for a single repeat)."""
    knobs = []
    for k in sorted({r.knob for r in records}):
        group = [r for r in records if r.knob == k]
        entry: dict[str, Any] = {"knob": k, "count": len(group)}
        for m in METRICS + ("test_loss_raw", "train_loss_raw"):
            vals = np.array([getattr(r, m) for r in group], dtype=float)
            entry[f"{m}_mean"] = float(vals.mean())
            entry[f"{m}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        knobs.append(entry)
    out: dict[str, Any] = {"knobs": knobs, "records": [asdict(r) for r in records]}
    if cfg is not None:
        out["family"] = cfg.family
        out["config"] = cfg.to_dict()
    return out


def write_sweep_outputs(records: list[SweepRecord], out_dir, cfg: SweepConfig | None = None) -> dict:
    """Write ``records.csv`` and ``summary.json``; return their paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {"csv": os.path.join(out_dir, "records.csv"), "summary": os.path.join(out_dir, "summary.json")}
    _atomic_write(paths["csv"], records_to_csv(records))
    _atomic_write(paths["summary"], json.dumps(summarize(records, cfg), indent=2, sort_keys=True) + "\n")
    return paths


def _atomic_write(path: str, text: str) -> None:
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)
