"""Labelled feature datasets: the built-in synthetic task and CSV I/O."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidParameter


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    name: str = ""

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2:
            raise InvalidParameter(f"features must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise InvalidParameter("label count does not match record count")
        if self.num_classes < 2:
            raise InvalidParameter("num_classes must be >= 2")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise InvalidParameter("labels out of range")
        if X.size and not (np.all(X >= 0.0) and np.all(X <= 1.0)):
            raise InvalidParameter("features must lie in [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self):
        return self.X.shape[0]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    @classmethod
    def empty(cls, input_dim: int, num_classes: int, name="") -> "Dataset":
        return cls(np.zeros((0, input_dim)), np.zeros(0, dtype=np.int64), num_classes, name)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.num_classes, self.name)


def make_blobs(
    num_classes: int = 10,
    input_dim: int = 768,
    n_train: int = 5000,
    n_test: int = 1000,
    seed: int = 0,
    latent_dim: int = 16,
    spread: float = 0.9,
    noise: float = 0.05,
) -> tuple[Dataset, Dataset]:
    """Gaussian blobs in a latent space, squashed into ``[0, 1]^input_dim``.

    Latent class centres are drawn with standard deviation ``spread`` around
    the origin (records add unit latent noise), then pushed through a fixed random projection and a logistic squash, so
    records look like smooth "images" while the task stays learnable but not
    trivially separable.
    """
    rng = np.random.default_rng(seed)
    centres = rng.normal(scale=spread, size=(num_classes, latent_dim))
    proj = rng.normal(size=(latent_dim, input_dim)) / np.sqrt(latent_dim)

    def draw(n, name):
        y = rng.integers(0, num_classes, size=n)
        z = centres[y] + rng.normal(size=(n, latent_dim))
        X = 1.0 / (1.0 + np.exp(-(z @ proj)))
        X = np.clip(X + rng.normal(scale=noise, size=X.shape), 0.0, 1.0)
        return Dataset(X, y, num_classes, name)

    return draw(n_train, "blobs-train"), draw(n_test, "blobs-test")


def load_csv(path, num_classes: int | None = None) -> Dataset:
    """Read a CSV with a header row, feature columns, then an integer label.

    Raises :class:`FormatError` whose ``offset`` is the 1-based file row.
    """
    path = Path(path)
    rows, labels = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("empty dataset file", offset=1) from None
        width = len(header)
        if width < 2:
            raise FormatError("need at least one feature and a label column", offset=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise FormatError(f"expected {width} columns, got {len(row)}", offset=lineno)
            try:
                feats = [float(v) for v in row[:-1]]
                label = int(row[-1])
            except ValueError as exc:
                raise FormatError(f"non-numeric value: {exc}", offset=lineno) from None
            if any(not 0.0 <= f <= 1.0 for f in feats):
                raise FormatError("feature outside [0, 1]", offset=lineno)
            if label < 0 or (num_classes is not None and label >= num_classes):
                raise FormatError(f"label {label} out of range", offset=lineno)
            rows.append(feats)
            labels.append(label)
    if not rows:
        raise FormatError("dataset has no records", offset=2)
    C = num_classes if num_classes is not None else max(max(labels) + 1, 2)
    return Dataset(np.array(rows), np.array(labels), C, path.stem)


def save_csv(dataset: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(dataset.input_dim)] + ["label"])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([repr(float(v)) for v in x] + [int(y)])
