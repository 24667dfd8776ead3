"""Datasets, the planted-community generator, splits and CSV loaders."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hypergraph import Hypergraph, load_hypergraph, save_hypergraph

HYPERGRAPH_FILE = "hypergraph.txt"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    hg: Hypergraph
    X_V: np.ndarray
    labels: np.ndarray
    c: int
    X_E: np.ndarray | None = None

    def __post_init__(self):
        n = self.hg.n
        if self.X_V.ndim != 2 or self.X_V.shape[0] != n:
            raise ValueError(f"X_V must have {n} rows, got shape {self.X_V.shape}")
        if self.labels.shape != (n,):
            raise ValueError(f"labels must have length {n}, got {self.labels.shape}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.c):
            raise ValueError(f"labels must lie in [0, {self.c})")
        if self.X_E is not None and self.X_E.shape[0] != self.hg.m:
            raise ValueError(f"X_E must have {self.hg.m} rows, got {self.X_E.shape[0]}")

    @property
    def n(self) -> int:
        return self.hg.n

    @property
    def d_in(self) -> int:
        return self.X_V.shape[1]


@dataclass(frozen=True)
class SplitSpec:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    seed: int


def generate_planted(
    n: int,
    m: int,
    c: int,
    mean_scale: float = 1.0,
    feature_std: float = 1.0,
    p_inter: float = 0.05,
    seed: int = 0,
    d_in: int = 100,
) -> Dataset:
    """Planted-community hypergraph with label-dependent Gaussian features.

    Each hyperedge picks a home community and 2 to 6 members from it; every
    member is then swapped for a uniformly random node with probability
    ``p_inter``. Node features are ``mean_scale * mu[label] + noise`` with
    ``mu ~ N(0, I)`` drawn once per class and noise of std ``feature_std``.
    """
    if c < 2 or n < c:
        raise ValueError(f"need n >= c >= 2, got n={n}, c={c}")
    if m < 1:
        raise ValueError("need at least one hyperedge")
    if n // c < 2:
        raise ValueError(f"communities of size {n // c} are smaller than 2")
    if not 0.0 <= p_inter <= 1.0:
        raise ValueError("p_inter must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % c)
    members_of = [np.flatnonzero(labels == k) for k in range(c)]
    class_means = rng.standard_normal((c, d_in))

    edges = []
    for _ in range(m):
        home = members_of[rng.integers(c)]
        k = min(int(rng.integers(2, 7)), home.size)
        chosen = rng.choice(home, size=k, replace=False)
        swap = rng.random(k) < p_inter
        chosen = np.where(swap, rng.integers(0, n, size=k), chosen)
        edges.append(chosen.tolist())

    noise = rng.standard_normal((n, d_in))
    X_V = mean_scale * class_means[labels] + feature_std * noise
    return Dataset(hg=Hypergraph.from_hyperedges(n, edges), X_V=X_V, labels=labels, c=c)


def make_splits(n: int, seed: int) -> SplitSpec:
    """Random 50/25/25 split: floor(n/2) train, floor(n/4) val, rest test."""
    if n < 4:
        raise ValueError("need at least 4 nodes to split")
    perm = np.random.default_rng(seed).permutation(n)
    n_train, n_val = n // 2, n // 4
    return SplitSpec(
        train=np.sort(perm[:n_train]),
        val=np.sort(perm[n_train : n_train + n_val]),
        test=np.sort(perm[n_train + n_val :]),
        seed=seed,
    )


def _read_features(path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                rows.append([float(cell) for cell in row])
            except ValueError:
                col = next(i for i, cell in enumerate(row, 1) if not _is_float(cell))
                raise DataFormatError(
                    f"{path}: line {lineno}, column {col}: non-numeric value {row[col - 1]!r}"
                ) from None
            if len(rows[-1]) != len(rows[0]):
                raise DataFormatError(
                    f"{path}: line {lineno}: expected {len(rows[0])} values, got {len(rows[-1])}"
                )
    return np.array(rows, dtype=np.float64)


def _read_labels(path, c: int | None) -> np.ndarray:
    labels = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            tok = raw.strip()
            if not tok:
                continue
            try:
                y = int(tok)
            except ValueError:
                raise DataFormatError(f"{path}: line {lineno}: non-integer label {tok!r}") from None
            if y < 0 or (c is not None and y >= c):
                bound = f"[0, {c})" if c is not None else "non-negative"
                raise DataFormatError(f"{path}: line {lineno}: label {y} outside {bound}")
            labels.append(y)
    return np.array(labels, dtype=np.int64)


def load_dataset(hypergraph_path, features_csv, labels_csv, c: int | None = None) -> Dataset:
    """Load a dataset; ``c`` defaults to ``max(label) + 1`` (at least 2)."""
    hg = load_hypergraph(hypergraph_path)
    X_V = _read_features(features_csv)
    if X_V.shape[0] != hg.n:
        raise DataFormatError(f"{features_csv}: {X_V.shape[0]} feature rows but n={hg.n}")
    labels = _read_labels(labels_csv, c)
    if labels.shape[0] != hg.n:
        raise DataFormatError(f"{labels_csv}: {labels.shape[0]} labels but n={hg.n}")
    if c is None:
        c = max(2, int(labels.max()) + 1)
    return Dataset(hg=hg, X_V=X_V, labels=labels, c=c)


def save_dataset(ds: Dataset, directory: str | os.PathLike) -> dict[str, Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "hypergraph": out / HYPERGRAPH_FILE,
        "features": out / FEATURES_FILE,
        "labels": out / LABELS_FILE,
    }
    save_hypergraph(ds.hg, paths["hypergraph"])
    with open(paths["features"], "w") as fh:
        for row in ds.X_V:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(paths["labels"], "w") as fh:
        fh.write("".join(f"{int(y)}\n" for y in ds.labels))
    return paths


def load_dataset_dir(directory: str | os.PathLike, c: int | None = None) -> Dataset:
    d = Path(directory)
    return load_dataset(d / HYPERGRAPH_FILE, d / FEATURES_FILE, d / LABELS_FILE, c=c)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True
