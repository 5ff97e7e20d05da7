"""Datasets: CSV ingestion, synthetic blobs, one-hot encoding and label noise."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from .errors import ConsistencyError, DomainError, ParseError

Layout = Literal["label-first", "label-last"]


@dataclass(frozen=True)
class Dataset:
    """Inputs ``(n, d)`` and targets ``(n, C)``.

    ``resampled`` is set only on the noisy half of :func:`randomize_labels`
    and holds the indices whose label was redrawn.
    """

    inputs: NDArray[np.float64]
    targets: NDArray[np.float64]
    resampled: NDArray[np.int64] | None = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=np.float64)
        Y = np.asarray(self.targets, dtype=np.float64)
        if X.ndim != 2 or Y.ndim != 2:
            raise DomainError("inputs and targets must be 2-d arrays")
        if X.shape[0] != Y.shape[0]:
            raise ConsistencyError(
                f"inputs have {X.shape[0]} rows but targets have {Y.shape[0]}"
            )
        if X.shape[0] < 1 or X.shape[1] < 1 or Y.shape[1] < 1:
            raise DomainError(f"degenerate dataset shape X={X.shape}, Y={Y.shape}")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", Y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    @property
    def C(self) -> int:
        return self.targets.shape[1]

    @property
    def labels(self) -> NDArray[np.int64]:
        """Class index per row (lowest index wins ties)."""
        return np.argmax(self.targets, axis=1)

    def is_one_hot(self) -> bool:
        Y = self.targets
        return bool(np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1))

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx)
        return Dataset(self.inputs[idx], self.targets[idx])


@dataclass(frozen=True)
class NoiseSpec:
    p: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"noise level p must lie in [0, 1], got {self.p}")


def one_hot(labels, class_count: int) -> NDArray[np.float64]:
    labels = np.asarray(labels)
    if class_count < 1:
        raise DomainError(f"class count must be >= 1, got {class_count}")
    bad = np.flatnonzero((labels < 0) | (labels >= class_count))
    if bad.size:
        raise DomainError(
            f"label {int(labels[bad[0]])} at row {int(bad[0])} outside [0, {class_count - 1}]"
        )
    Y = np.zeros((labels.shape[0], class_count))
    Y[np.arange(labels.shape[0]), labels.astype(np.int64)] = 1.0
    return Y


def _parse_int_label(token: str, line: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"label {token!r} is not a number", line) from None
    if not value.is_integer():
        raise ParseError(f"label {token!r} is not an integer", line)
    return int(value)


def _read_rows(path, header: bool) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not tok.strip() for tok in row):
                continue
            rows.append((lineno, [tok.strip() for tok in row]))
    return rows


def _to_floats(tokens: list[str], line: int) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-numeric value in {tokens!r}", line) from None


def load_csv(
    path,
    class_count: int,
    layout: Layout = "label-first",
    header: bool = False,
) -> Dataset:
    """Read a labelled CSV (one integer label per row) into a one-hot Dataset."""
    if layout not in ("label-first", "label-last"):
        raise DomainError(f"unknown layout {layout!r}")
    rows = _read_rows(path, header)
    if not rows:
        raise ParseError(f"{path}: no rows")
    width = len(rows[0][1])
    if width < 2:
        raise ParseError("need at least one feature and one label", rows[0][0])
    features, labels = [], []
    for lineno, tokens in rows:
        if len(tokens) != width:
            raise ParseError(f"expected {width} fields, found {len(tokens)}", lineno)
        if layout == "label-first":
            label_tok, feat_tok = tokens[0], tokens[1:]
        else:
            label_tok, feat_tok = tokens[-1], tokens[:-1]
        labels.append(_parse_int_label(label_tok, lineno))
        features.append(_to_floats(feat_tok, lineno))
    return Dataset(np.array(features), one_hot(np.array(labels), class_count))


def load_matrix_csv(path, header: bool = False) -> NDArray[np.float64]:
    """Read a dense numeric CSV (no labels)."""
    rows = _read_rows(path, header)
    if not rows:
        raise ParseError(f"{path}: no rows")
    width = len(rows[0][1])
    out = []
    for lineno, tokens in rows:
        if len(tokens) != width:
            raise ParseError(f"expected {width} fields, found {len(tokens)}", lineno)
        out.append(_to_floats(tokens, lineno))
    return np.array(out)


def load_labels(path) -> NDArray[np.int64]:
    """One integer label per line."""
    labels = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tok = line.strip()
            if tok:
                labels.append(_parse_int_label(tok, lineno))
    if not labels:
        raise ParseError(f"{path}: no rows")
    return np.array(labels, dtype=np.int64)


def load_feature_matrix(
    path, labels_path, class_count: int, header: bool = False
) -> Dataset:
    """Pair an exported feature matrix with its label file.

    A linear kernel on the resulting inputs retrains only a top layer on top
    of the exported representation.
    """
    X = load_matrix_csv(path, header=header)
    labels = load_labels(labels_path)
    if X.shape[0] != labels.shape[0]:
        raise ConsistencyError(
            f"{path} has {X.shape[0]} rows but {labels_path} has {labels.shape[0]} labels"
        )
    return Dataset(X, one_hot(labels, class_count))


def write_matrix_csv(path, M) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row))
            fh.write("\n")


def synth_blobs(
    n: int, d: int, C: int, separation: float, seed: int = 0
) -> Dataset:
    """Gaussian clusters with unit variance and balanced class counts.

    Centers are drawn at random and rescaled so that the closest pair sits
    exactly ``separation`` apart. Rows are shuffled.
    """
    if C < 1 or d < 1:
        raise DomainError("need d >= 1 and C >= 1")
    if n < C:
        raise DomainError(f"need n >= C to populate every class (n={n}, C={C})")
    if separation < 0:
        raise DomainError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((C, d))
    if C > 1:
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diff**2).sum(-1))
        closest = dist[np.triu_indices(C, 1)].min()
        centers *= separation / closest
    else:
        centers[:] = 0.0
    counts = np.full(C, n // C)
    counts[: n % C] += 1
    labels = np.repeat(np.arange(C), counts)
    X = centers[labels] + rng.standard_normal((n, d))
    order = rng.permutation(n)
    return Dataset(X[order], one_hot(labels[order], C))


def randomize_labels(ds: Dataset, spec: NoiseSpec) -> tuple[Dataset, Dataset]:
    """Redraw ``round(p * n)`` labels uniformly over all classes.

    Rows are chosen without replacement; a redrawn label may coincide with the
    original one. Returns ``(noisy, clean)``; ``noisy.resampled`` holds the
    chosen row indices in ascending order.
    """
    if not ds.is_one_hot():
        raise DomainError("randomize_labels needs one-hot targets")
    rng = np.random.default_rng(spec.seed)
    k = int(round(spec.p * ds.n))
    rows = np.sort(rng.choice(ds.n, size=k, replace=False))
    labels = ds.labels.copy()
    labels[rows] = rng.integers(0, ds.C, size=k)
    noisy = Dataset(ds.inputs, one_hot(labels, ds.C), resampled=rows)
    clean = replace(ds)
    return noisy, clean


def standardize(train: Dataset, *others: Dataset) -> tuple[Dataset, ...]:
    """Zero mean, unit variance per feature using training statistics only.

    Constant features are centered but left unscaled.
    """
    mu = train.inputs.mean(axis=0)
    sd = train.inputs.std(axis=0)
    sd[sd == 0] = 1.0
    return tuple(
        Dataset((ds.inputs - mu) / sd, ds.targets) for ds in (train, *others)
    )


def train_test_split(
    ds: Dataset, test_fraction: float, seed: int
) -> tuple[Dataset, Dataset]:
    if not 0.0 < test_fraction < 1.0:
        raise DomainError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(test_fraction * ds.n))
    if n_test < 1 or n_test >= ds.n:
        raise DomainError(f"cannot hold out {n_test} of {ds.n} rows")
    perm = np.random.default_rng(seed).permutation(ds.n)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def class_count_from(path: str | Path) -> int:
    """Infer ``C`` as ``max(label) + 1`` from a label file."""
    return int(load_labels(path).max()) + 1
