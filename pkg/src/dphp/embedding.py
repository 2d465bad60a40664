"""Labeled mean embeddings and the MMD estimators built on them."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import IncompatibleEmbeddingError
from .featuremaps import CombinedMap, FeatureMap

CHUNK_ROWS = 4096
PART_TAGS = ("sum", "product", "rff", "combined-sum-block", "combined-product-block")


@dataclass(frozen=True)
class LabeledMeanEmbedding:
    """``(1/m) sum_i h(x_i) onehot(y_i)^T`` as a (features, classes) matrix."""

    matrix: np.ndarray = field(repr=False)
    count: int
    part: str
    fingerprint: str
    privatized: bool = False
    noise_std: float = 0.0

    def __post_init__(self):
        if self.part not in PART_TAGS:
            raise ValueError(f"unknown part tag {self.part!r}")
        if self.count < 1:
            raise ValueError("sample count must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def to_dict(self) -> dict:
        return {
            "format": "dphp-embedding/1",
            "part": self.part,
            "count": self.count,
            "fingerprint": self.fingerprint,
            "privatized": self.privatized,
            "noise_std": self.noise_std,
            "shape": list(self.matrix.shape),
            "matrix": self.matrix.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledMeanEmbedding":
        if d.get("format") != "dphp-embedding/1":
            raise ValueError(f"unsupported embedding format {d.get('format')!r}")
        matrix = np.asarray(d["matrix"], dtype=np.float64).reshape(d["shape"])
        return cls(matrix, d["count"], d["part"], d["fingerprint"], d["privatized"], d["noise_std"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "LabeledMeanEmbedding":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_matrix(self, matrix: np.ndarray, **changes) -> "LabeledMeanEmbedding":
        return replace(self, matrix=matrix, **changes)


def one_hot(y, num_classes: int) -> np.ndarray:
    """One-hot rows for integer labels; a scalar label gives a single vector."""
    y_arr = np.asarray(y)
    if not np.issubdtype(y_arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(y_arr, 1), 0)):
            raise ValueError("labels must be integers")
        y_arr = y_arr.astype(np.int64)
    if np.any(y_arr < 0) or np.any(y_arr >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return np.eye(num_classes)[y_arr]


def _part_tag(spec: FeatureMap) -> str:
    return {"sum": "sum", "product": "product", "rff": "rff"}[spec.kind]


def _accumulate(X: np.ndarray, Y: np.ndarray, spec) -> np.ndarray:
    # Chunked accumulate-then-divide keeps memory flat for large m.
    total = np.zeros((spec.length, Y.shape[1]))
    for start in range(0, X.shape[0], CHUNK_ROWS):
        stop = start + CHUNK_ROWS
        total += spec(X[start:stop]).T @ Y[start:stop]
    return total


def mean_embedding(X, y, spec: FeatureMap, num_classes: int):
    """Labeled mean embedding of ``(X, y)`` under ``spec``.

    A ``CombinedMap`` yields ``(product_block, sum_block)`` as two embeddings.
    Every column is divided by the total count, so class frequencies show up
    in column magnitudes.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    m = X.shape[0]
    if m == 0:
        raise ValueError("cannot embed an empty dataset")
    y = np.asarray(y)
    if y.shape[0] != m:
        raise ValueError("labels and rows differ in length")
    Y = one_hot(y, num_classes)
    if isinstance(spec, CombinedMap):
        prod = LabeledMeanEmbedding(_accumulate(X, Y, spec.product) / m, m, "combined-product-block",
                                    spec.product.fingerprint())
        summ = LabeledMeanEmbedding(_accumulate(X, Y, spec.sum) / m, m, "combined-sum-block",
                                    spec.sum.fingerprint())
        return prod, summ
    return LabeledMeanEmbedding(_accumulate(X, Y, spec) / m, m, _part_tag(spec), spec.fingerprint())


def _check_compatible(a: LabeledMeanEmbedding, b: LabeledMeanEmbedding) -> None:
    if a.fingerprint != b.fingerprint:
        raise IncompatibleEmbeddingError(
            f"embeddings come from different feature maps ({a.fingerprint} vs {b.fingerprint})")
    if a.matrix.shape != b.matrix.shape:
        raise IncompatibleEmbeddingError(f"shape mismatch {a.matrix.shape} vs {b.matrix.shape}")


def mmd_sq_features(emb_p: LabeledMeanEmbedding, emb_q: LabeledMeanEmbedding) -> float:
    _check_compatible(emb_p, emb_q)
    diff = emb_p.matrix - emb_q.matrix
    return float(np.sum(diff * diff))


def mmd_sq_full(X, Xp, kernel_fn) -> float:
    """Biased quadratic-time MMD^2 with the diagonal included.

    ``kernel_fn(A, B)`` returns the Gram matrix between the rows of ``A`` and ``B``.
    """
    X = np.asarray(X, dtype=np.float64)
    Xp = np.asarray(Xp, dtype=np.float64)
    if len(X) == 0 or len(Xp) == 0:
        raise ValueError("both samples must be non-empty")
    return float(kernel_fn(X, X).mean() + kernel_fn(Xp, Xp).mean() - 2.0 * kernel_fn(X, Xp).mean())


def labeled_kernel(spec: FeatureMap, num_classes: int):
    """Kernel on rows ``[x, y]`` induced by ``g(x, y) = h(x) onehot(y)^T``.

    Returns ``h(x) . h(x') * [y == y']``; the label sits in the last column.
    """

    def kernel(A, B):
        ha, hb = spec(A[:, :-1]), spec(B[:, :-1])
        same = one_hot(A[:, -1], num_classes) @ one_hot(B[:, -1], num_classes).T
        return (ha @ hb.T) * same

    return kernel


def augmented_loss(emb_p_prod, emb_p_sum, emb_q_prod, emb_q_sum, gamma: float,
                   gamma_target: str = "product") -> float:
    """``gamma`` times one squared distance plus the other.

    ``gamma_target='product'`` weights the product-kernel term; ``'sum'``
    weights the sum-kernel term instead.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    d_prod = mmd_sq_features(emb_p_prod, emb_q_prod)
    d_sum = mmd_sq_features(emb_p_sum, emb_q_sum)
    if gamma_target == "product":
        return gamma * d_prod + d_sum
    if gamma_target == "sum":
        return d_prod + gamma * d_sum
    raise ValueError(f"gamma_target must be 'product' or 'sum', got {gamma_target!r}")
