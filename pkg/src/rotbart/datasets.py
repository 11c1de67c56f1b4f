"""Benchmark data generators, CSV round-trip and response scaling."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "ScaledData",
    "gen_friedman",
    "gen_wu_synthetic",
    "load_csv",
    "write_csv",
    "scale_dataset",
    "CsvFormatError",
]


class CsvFormatError(ValueError):
    """Raised when a dataset file cannot be interpreted."""


@dataclass
class Dataset:
    """Raw-unit design matrix, response and (optionally) the noiseless truth."""

    X: np.ndarray
    y: np.ndarray
    truth: np.ndarray | None = None
    columns: tuple = ()

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if len(self.y) != self.X.shape[0]:
            raise ValueError("X and y lengths differ")
        if self.truth is not None:
            self.truth = np.asarray(self.truth, dtype=float)
            if len(self.truth) != len(self.y):
                raise ValueError("truth and y lengths differ")
        if not self.columns:
            self.columns = tuple(f"x{i + 1}" for i in range(self.X.shape[1]))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class ScaledData:
    """Model-scale view of a dataset plus the invertible transforms.

    Covariates are min-max scaled to [0, 1] per column and the response is
    mapped to [-0.5, 0.5]; all reported predictions and intervals go back
    through :meth:`inverse_y`.
    """

    X: np.ndarray
    y: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float
    y_max: float

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def y_range(self) -> float:
        return self.y_max - self.y_min

    def scale_points(self, X_raw: np.ndarray) -> np.ndarray:
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=float))
        span = self.x_max - self.x_min
        out = np.empty_like(X_raw)
        for j in range(X_raw.shape[1]):
            if span[j] == 0:
                out[:, j] = 0.5
            else:
                out[:, j] = (X_raw[:, j] - self.x_min[j]) / span[j]
        return out

    def inverse_y(self, y_scaled: np.ndarray) -> np.ndarray:
        return (np.asarray(y_scaled, dtype=float) + 0.5) * self.y_range + self.y_min

    def inverse_sigma2(self, sigma2_scaled: float) -> float:
        return float(sigma2_scaled) * self.y_range**2


def scale_dataset(dataset: Dataset) -> ScaledData:
    """Min-max scale covariates to the unit interval and the response to
    [-0.5, 0.5].  Constant covariate columns map to 0.5 with a warning."""
    X = dataset.X
    x_min = X.min(axis=0)
    x_max = X.max(axis=0)
    span = x_max - x_min
    Xs = np.empty_like(X, dtype=float)
    for j in range(X.shape[1]):
        if span[j] == 0:
            warnings.warn(f"column {dataset.columns[j]} is constant; mapped to 0.5",
                          stacklevel=2)
            Xs[:, j] = 0.5
        else:
            Xs[:, j] = (X[:, j] - x_min[j]) / span[j]
    y_min = float(dataset.y.min())
    y_max = float(dataset.y.max())
    if y_max == y_min:
        y_max = y_min + 1.0  # degenerate constant response
    ys = (dataset.y - y_min) / (y_max - y_min) - 0.5
    return ScaledData(Xs, ys, x_min, x_max, y_min, y_max)


def gen_friedman(n: int, sigma2: float, seed: int, d_total: int = 10) -> Dataset:
    """The five-active-variable benchmark surface on uniform covariates:
    f(x) = 10 sin(pi x1 x2) + 20 (x3 - 0.5)^2 + 10 x4 + 5 x5, observed with
    independent Normal(0, sigma2) noise.  Extra covariates are inert."""
    if n < 1:
        raise ValueError("n >= 1 required")
    if sigma2 < 0:
        raise ValueError("sigma2 must be nonnegative")
    if d_total < 5:
        raise ValueError("d_total >= 5 required")
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d_total))
    truth = (10.0 * np.sin(np.pi * X[:, 0] * X[:, 1])
             + 20.0 * (X[:, 2] - 0.5) ** 2
             + 10.0 * X[:, 3] + 5.0 * X[:, 4])
    y = truth + math.sqrt(sigma2) * rng.standard_normal(n)
    return Dataset(X, y, truth)


def gen_wu_synthetic(seed: int) -> Dataset:
    """Three-covariate synthetic benchmark with confounded x1 and x3.

    n is fixed at 300.  The first 200 rows draw x1 low / x3 high and the
    remaining 100 the reverse, so the two are strongly negatively
    correlated; x2 separates the response levels 1 and 3 on the x1-low side
    while every x1-high row sits at level 5.  Noise is Normal with
    variance 0.25.
    """
    rng = np.random.default_rng(seed)
    n = 300
    x1 = np.empty(n)
    x2 = np.empty(n)
    x3 = np.empty(n)
    x1[:200] = rng.uniform(0.1, 0.4, size=200)
    x1[200:] = rng.uniform(0.6, 0.9, size=100)
    x2[:100] = rng.uniform(0.1, 0.4, size=100)
    x2[100:200] = rng.uniform(0.6, 0.9, size=100)
    x2[200:] = rng.uniform(0.1, 0.9, size=100)
    x3[:200] = rng.uniform(0.6, 0.9, size=200)
    x3[200:] = rng.uniform(0.1, 0.4, size=100)
    X = np.column_stack([x1, x2, x3])
    truth = np.where(x1 > 0.5, 5.0, np.where(x2 > 0.5, 3.0, 1.0))
    y = truth + math.sqrt(0.25) * rng.standard_normal(n)
    return Dataset(X, y, truth)


def write_csv(dataset: Dataset, path) -> None:
    """Write covariate columns, the response and (when present) the truth."""
    header = list(dataset.columns) + ["y"]
    if dataset.truth is not None:
        header.append("truth")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.X[i]]
            row.append(repr(float(dataset.y[i])))
            if dataset.truth is not None:
                row.append(repr(float(dataset.truth[i])))
            writer.writerow(row)


def load_csv(path) -> Dataset:
    """Load a dataset written by :func:`write_csv` (or shaped like it): a
    header row, covariate columns, the response last, with an optional
    ``truth`` column after it."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        rows = list(reader)
    if not header or any(not name.strip() for name in header):
        raise CsvFormatError(f"{path}: missing or blank column names in header")
    if not rows:
        raise CsvFormatError(f"{path}: no data rows")
    has_truth = header[-1] == "truth"
    y_col = len(header) - (2 if has_truth else 1)
    if y_col < 1:
        raise CsvFormatError(f"{path}: need at least one covariate column")
    values = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise CsvFormatError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                values[i, j] = float(cell)
            except ValueError:
                raise CsvFormatError(
                    f"{path}: non-numeric value {cell!r} at row {i + 2},"
                    f" column {header[j]!r}") from None
    X = values[:, :y_col]
    y = values[:, y_col]
    truth = values[:, -1] if has_truth else None
    return Dataset(X, y, truth, columns=tuple(header[:y_col]))
