"""Evaluation metrics for generated data."""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import logsumexp

from .data import GmmSpec


def gmm_nll(X, y, spec: GmmSpec) -> float:
    """Mean of ``-log sum_{j in C_y} (1/25) N(x | mu_j, std^2 I)`` over samples."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        return float("nan")
    var = spec.std**2
    sq = ((X[:, None, :] - spec.means[None, :, :]) ** 2).sum(-1)
    log_comp = -sq / (2 * var) - math.log(2 * math.pi * var) - math.log(len(spec.means))
    mask = spec.classes[None, :] == y[:, None]
    log_comp = np.where(mask, log_comp, -np.inf)
    return float(-np.mean(logsumexp(log_comp, axis=1)))


def mode_coverage(X, y, spec: GmmSpec, radius: float | None = None, min_count: int = 3) -> int:
    """Number of modes with at least ``min_count`` same-class samples within ``radius``."""
    radius = 2 * spec.std if radius is None else radius
    X = np.asarray(X, dtype=np.float64).reshape(-1, 2)
    y = np.asarray(y, dtype=np.int64)
    if len(X) == 0:
        return 0
    covered = 0
    for mean, cls in zip(spec.means, spec.classes):
        near = np.sum((X - mean) ** 2, axis=1) <= radius**2
        if np.count_nonzero(near & (y == cls)) >= min_count:
            covered += 1
    return covered


def marginal_tv(real: dict, synth: dict, subset: tuple[str, ...]) -> float:
    """Total variation between the normalized contingency tables over ``subset``."""
    r = np.stack([np.asarray(real[c]).astype(np.int64) for c in subset], axis=1)
    s = np.stack([np.asarray(synth[c]).astype(np.int64) for c in subset], axis=1)
    cells_r, counts_r = np.unique(r, axis=0, return_counts=True)
    cells_s, counts_s = np.unique(s, axis=0, return_counts=True)
    p = {tuple(c): k / len(r) for c, k in zip(cells_r, counts_r)}
    q = {tuple(c): k / len(s) for c, k in zip(cells_s, counts_s)}
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))


def alpha_way_error(real: dict, synth: dict, alpha: int, max_tuples: int = 2000,
                    rng: np.random.Generator | None = None, columns: list[str] | None = None) -> dict:
    """Mean total variation over ``alpha``-column marginals.

    Enumerates every subset when there are at most ``max_tuples`` of them,
    otherwise samples ``max_tuples`` distinct subsets uniformly.
    """
    columns = list(columns or real.keys())
    if not 1 <= alpha <= len(columns):
        raise ValueError(f"alpha={alpha} must lie in [1, {len(columns)}]")
    total = math.comb(len(columns), alpha)
    if total <= max_tuples:
        subsets = list(itertools.combinations(columns, alpha))
        mode = "exhaustive"
    else:
        rng = rng or np.random.default_rng(0)
        picked: set[tuple[int, ...]] = set()
        while len(picked) < max_tuples:
            picked.add(tuple(sorted(rng.choice(len(columns), size=alpha, replace=False).tolist())))
        subsets = [tuple(columns[i] for i in idx) for idx in sorted(picked)]
        mode = "sampled"
    errors = [marginal_tv(real, synth, s) for s in subsets]
    return {"error": float(np.mean(errors)), "alpha": alpha, "num_subsets": len(subsets), "mode": mode,
            "max_tuples": max_tuples}


def roc_auc(scores, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic (ties averaged)."""
    from scipy.stats import rankdata

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        return float("nan")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1_macro(pred, truth, num_classes: int) -> float:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    scores = []
    for k in range(num_classes):
        tp = np.sum((pred == k) & (truth == k))
        fp = np.sum((pred == k) & (truth != k))
        fn = np.sum((pred != k) & (truth == k))
        denom = 2 * tp + fp + fn
        scores.append(0.0 if denom == 0 else 2 * tp / denom)
    return float(np.mean(scores))


def downstream_logreg(X_train, y_train, X_test, y_test, num_classes: int | None = None,
                      epochs: int = 500, lr: float = 0.5, l2: float = 1e-4) -> dict:
    """Fit multinomial logistic regression by full-batch gradient descent on
    ``(X_train, y_train)`` and score it on ``(X_test, y_test)``."""
    X_train = np.asarray(X_train, dtype=np.float64)
    X_test = np.asarray(X_test, dtype=np.float64)
    y_train = np.asarray(y_train, dtype=np.int64)
    y_test = np.asarray(y_test, dtype=np.int64)
    K = num_classes or int(max(y_train.max(), y_test.max()) + 1)
    mu = X_train.mean(axis=0)
    sd = X_train.std(axis=0)
    sd[sd == 0] = 1.0
    A = (X_train - mu) / sd
    B = (X_test - mu) / sd
    W = np.zeros((A.shape[1], K))
    b = np.zeros(K)
    Y = np.eye(K)[y_train]
    n = len(A)
    for _ in range(epochs):
        logits = A @ W + b
        logits -= logits.max(axis=1, keepdims=True)
        P = np.exp(logits)
        P /= P.sum(axis=1, keepdims=True)
        G = (P - Y) / n
        W -= lr * (A.T @ G + l2 * W)
        b -= lr * G.sum(axis=0)
    logits = B @ W + b
    pred = np.argmax(logits, axis=1)
    out = {"accuracy": float(np.mean(pred == y_test)), "f1_macro": f1_macro(pred, y_test, K)}
    if K == 2:
        out["roc_auc"] = roc_auc(logits[:, 1] - logits[:, 0], y_test == 1)
    return out
