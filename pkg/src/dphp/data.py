"""Ground-truth data sources and tabular encoding.

Two sources feed the trainer: a labeled 25-component Gaussian mixture on a
5x5 grid, and CSV tables described by a JSON schema.  Both end up as a matrix
in ``[0, 1]^{n x D}`` plus integer labels.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

NUM_CLUSTERS = 25
NUM_GMM_CLASSES = 5


def latin_square_classes(grid: int = 5, shift: int = 2) -> np.ndarray:
    """Class of the cluster at (row, col): ``(col - shift*row) mod grid``.

    Each class owns one cluster per row and per column; with ``shift=2`` the
    nearest same-class clusters are ``sqrt(5)`` grid steps apart.
    """
    rows, cols = np.divmod(np.arange(grid * grid), grid)
    return (cols - shift * rows) % grid


@dataclass(frozen=True)
class GmmSpec:
    means: np.ndarray = field(repr=False)
    classes: np.ndarray = field(repr=False)
    std: float = 0.2

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        classes = np.asarray(self.classes, dtype=np.int64)
        if means.shape != (NUM_CLUSTERS, 2):
            raise ValueError("a GMM spec needs 25 two-dimensional means")
        if classes.shape != (NUM_CLUSTERS,) or sorted(np.bincount(classes, minlength=5)) != [5] * 5:
            raise ValueError("each of the 5 classes must own exactly 5 clusters")
        if not self.std > 0:
            raise ValueError("cluster std must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "classes", classes)

    @classmethod
    def grid(cls, spacing: float = 1.0, origin=(0.0, 0.0), std: float = 0.2) -> "GmmSpec":
        rows, cols = np.divmod(np.arange(NUM_CLUSTERS), 5)
        means = np.stack([cols, rows], axis=1) * spacing + np.asarray(origin, dtype=np.float64)
        return cls(means, latin_square_classes(), std)

    @property
    def num_classes(self) -> int:
        return NUM_GMM_CLASSES

    def bounds(self, margin_stds: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
        """Per-coordinate box holding the means plus ``margin_stds`` cluster stds."""
        pad = margin_stds * self.std
        return self.means.min(axis=0) - pad, self.means.max(axis=0) + pad

    def to_dict(self) -> dict:
        return {"means": self.means.tolist(), "classes": self.classes.tolist(), "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "GmmSpec":
        if "means" in d:
            return cls(np.asarray(d["means"]), np.asarray(d["classes"]), d.get("std", 0.2))
        return cls.grid(d.get("spacing", 1.0), tuple(d.get("origin", (0.0, 0.0))), d.get("std", 0.2))


def gmm_sample(spec: GmmSpec, n_total: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n_total`` points, split as evenly as possible over the clusters.

    Cluster ``j`` gets ``n_total // 25`` points, plus one when
    ``j < n_total % 25``.
    """
    if n_total < 0:
        raise ValueError("sample count must be non-negative")
    base, extra = divmod(n_total, NUM_CLUSTERS)
    counts = np.full(NUM_CLUSTERS, base)
    counts[:extra] += 1
    cluster = np.repeat(np.arange(NUM_CLUSTERS), counts)
    x = spec.means[cluster] + spec.std * rng.standard_normal((n_total, 2))
    return x, spec.classes[cluster].copy()


def train_test_split(X, y, test_fraction: float = 0.1, rng: np.random.Generator | None = None):
    X = np.asarray(X)
    y = np.asarray(y)
    rng = rng or np.random.default_rng(0)
    perm = rng.permutation(len(X))
    n_test = int(round(test_fraction * len(X)))
    test, train = perm[:n_test], perm[n_test:]
    return X[train], y[train], X[test], y[test]


class MinMaxScaler:
    """Per-feature affine map of declared bounds onto ``[0, 1]``, with clamping."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        if np.any(self.hi <= self.lo) or not np.all(np.isfinite(self.lo)) or not np.all(np.isfinite(self.hi)):
            raise ValueError("bounds must be finite with max > min")

    def transform(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.lo) / (self.hi - self.lo)
        outside = (Z < 0) | (Z > 1)
        if np.any(outside):
            logger.warning("%d values outside the declared bounds were clamped", int(outside.sum()))
        return np.clip(Z, 0.0, 1.0)

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=np.float64) * (self.hi - self.lo) + self.lo


# ---------------------------------------------------------------------------
# tabular data

COLUMN_KINDS = ("numeric", "categorical", "ordinal")


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    min: float | None = None
    max: float | None = None
    cardinality: int | None = None
    precision: float | None = None

    def __post_init__(self):
        if self.kind not in COLUMN_KINDS:
            raise ValueError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == "numeric":
            if self.min is None or self.max is None or not np.isfinite([self.min, self.max]).all() \
                    or self.max <= self.min:
                raise ValueError(f"numeric column {self.name!r} needs finite min < max")
        elif self.cardinality is None or self.cardinality < 2:
            raise ValueError(f"column {self.name!r} needs cardinality >= 2")

    @property
    def width(self) -> int:
        return 1 if self.kind == "numeric" else int(self.cardinality)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        for key in ("min", "max", "cardinality", "precision"):
            if getattr(self, key) is not None:
                d[key] = getattr(self, key)
        return d


@dataclass(frozen=True)
class TabularSchema:
    """Feature columns plus a categorical label column.

    Numeric columns encode to one min-max scaled entry; categorical and
    ordinal columns (integer codes ``0..cardinality-1``) encode to one-hot
    blocks.
    """

    columns: tuple[Column, ...]
    label: str
    num_classes: int

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("duplicate column names in schema")
        if self.label in names:
            raise ValueError("the label column must not also be a feature column")
        if self.num_classes < 2:
            raise ValueError("label needs at least two classes")

    @classmethod
    def from_dict(cls, d: dict) -> "TabularSchema":
        label = d["label"]
        cols, num_classes = [], None
        for c in d["columns"]:
            if c["name"] == label:
                num_classes = int(c["cardinality"])
                continue
            cols.append(Column(c["name"], c["kind"], c.get("min"), c.get("max"), c.get("cardinality"),
                               c.get("precision")))
        if num_classes is None:
            num_classes = int(d.get("num_classes", 0))
        if num_classes is None or num_classes < 2:
            raise ValueError("schema must declare the label column with its cardinality")
        return cls(tuple(cols), label, num_classes)

    @classmethod
    def load(cls, path) -> "TabularSchema":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        cols = [c.to_dict() for c in self.columns]
        cols.append({"name": self.label, "kind": "categorical", "cardinality": self.num_classes})
        return {"columns": cols, "label": self.label}

    @property
    def encoded_width(self) -> int:
        return sum(c.width for c in self.columns)

    def blocks(self) -> list[tuple[str, int]]:
        """Decoder per encoded block: ``sigmoid`` for numeric, ``softmax`` otherwise."""
        return [("sigmoid", 1) if c.kind == "numeric" else ("softmax", c.width) for c in self.columns]

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns] + [self.label]


def _as_code(value, column: Column) -> int:
    code = int(float(value))
    if code != float(value) or not 0 <= code < column.cardinality:
        raise ValueError(f"column {column.name!r}: value {value!r} is not a code in [0, {column.cardinality})")
    return code


def encode(table: dict[str, np.ndarray], schema: TabularSchema) -> tuple[np.ndarray, np.ndarray]:
    """Encode a column table into ``([0,1]^{n x D_enc}, labels)``."""
    n = len(table[schema.label])
    out = np.zeros((n, schema.encoded_width))
    pos = 0
    for col in schema.columns:
        values = np.asarray(table[col.name])
        if col.kind == "numeric":
            scaled = (values.astype(np.float64) - col.min) / (col.max - col.min)
            outside = (scaled < 0) | (scaled > 1)
            if np.any(outside):
                logger.warning("column %r: %d values clamped to [%g, %g]", col.name, int(outside.sum()),
                               col.min, col.max)
            out[:, pos] = np.clip(scaled, 0.0, 1.0)
        else:
            codes = np.array([_as_code(v, col) for v in values], dtype=np.int64)
            out[np.arange(n), pos + codes] = 1.0
        pos += col.width
    labels = np.array([int(float(v)) for v in table[schema.label]], dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= schema.num_classes):
        raise ValueError("label values outside [0, num_classes)")
    return out, labels


def decode(matrix, schema: TabularSchema, labels=None) -> dict[str, np.ndarray]:
    """Invert ``encode``; one-hot blocks decode by argmax."""
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != schema.encoded_width:
        raise ValueError(f"expected {schema.encoded_width} encoded columns, got shape {M.shape}")
    table: dict[str, np.ndarray] = {}
    pos = 0
    for col in schema.columns:
        if col.kind == "numeric":
            vals = np.clip(M[:, pos], 0.0, 1.0) * (col.max - col.min) + col.min
            if col.precision:
                vals = np.round(vals / col.precision) * col.precision
            table[col.name] = vals
        else:
            table[col.name] = np.argmax(M[:, pos:pos + col.width], axis=1).astype(np.int64)
        pos += col.width
    if labels is not None:
        table[schema.label] = np.asarray(labels, dtype=np.int64)
    return table


def read_csv(path) -> dict[str, np.ndarray]:
    """Read a headed, comma-delimited UTF-8 CSV into float columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    cols = {name: np.array([float(r[i]) for r in rows], dtype=np.float64) for i, name in enumerate(header)}
    return cols


def _fmt(v) -> str:
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    f = float(v)
    return str(int(f)) if f.is_integer() and abs(f) < 1e15 else repr(f)


def write_csv(path, table: dict[str, np.ndarray], columns: list[str] | None = None) -> None:
    columns = columns or list(table)
    n = len(table[columns[0]]) if columns else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for i in range(n):
            w.writerow([_fmt(table[c][i]) for c in columns])


def independent_marginals(table: dict[str, np.ndarray], n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Resample each column independently from its empirical 1-way marginal."""
    out = {}
    for name, values in table.items():
        values = np.asarray(values)
        out[name] = values[rng.integers(0, len(values), size=n)]
    return out


def correlated_categorical(n: int, rng: np.random.Generator, num_features: int = 5,
                           cardinality: int = 3, noise: float = 0.2) -> tuple[dict[str, np.ndarray], TabularSchema]:
    """Categorical table with planted pairwise structure.

    A binary label drives ``f0``; every later column copies its predecessor
    with probability ``1 - noise`` and is otherwise uniform.
    """
    label = rng.integers(0, 2, size=n)
    cols = {}
    prev = np.where(rng.random(n) < 1 - noise, label * (cardinality - 1), rng.integers(0, cardinality, size=n))
    cols["f0"] = prev
    for j in range(1, num_features):
        keep = rng.random(n) < 1 - noise
        prev = np.where(keep, prev, rng.integers(0, cardinality, size=n))
        cols[f"f{j}"] = prev
    cols["label"] = label
    schema = TabularSchema(tuple(Column(f"f{j}", "categorical", cardinality=cardinality)
                                 for j in range(num_features)), "label", 2)
    return {k: v.astype(np.int64) for k, v in cols.items()}, schema
