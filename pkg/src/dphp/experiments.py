"""Experiment drivers shared by the command line and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import (GmmSpec, MinMaxScaler, TabularSchema, decode, encode, gmm_sample, independent_marginals,
                   train_test_split)
from .featuremaps import RandomFourierMap, SumMap, approx_error
from .generator import TrainConfig, TrainResult, generate, train
from .hermite import HermiteBasis, median_heuristic
from .metrics import alpha_way_error, gmm_nll, mode_coverage
from .rng import substream

# ---------------------------------------------------------------------------
# kernel approximation benchmark


def two_sample_data(seed: int = 0, n: int = 100, shift: float = 1.0):
    """``n`` draws from N(0, 1) and ``n`` from N(shift, 1), as column vectors."""
    rng = substream(seed, "data")
    return rng.standard_normal((n, 1)), shift + rng.standard_normal((n, 1))


def features_benchmark(X, Y, length_scale: float, orders, counts, redraws: int = 10, seed: int = 0):
    """Approximation error of HP features per order and of RF features per count.

    Returns ``(hp_rows, rf_rows)`` with rows ``(order_or_count, error, stddev)``;
    the RF error is averaged over ``redraws`` frequency draws (stddev across
    draws), HP rows are deterministic (stddev 0).
    """
    orders, counts = list(orders), list(counts)
    if not orders and not counts:
        raise ValueError("benchmark needs at least one HP order or RF count")
    if redraws < 1:
        raise ValueError("rf_redraws must be at least 1")
    dim = np.asarray(X).reshape(len(X), -1).shape[1]
    hp_rows = []
    for C in orders:
        if int(C) != C or C < 0:
            raise ValueError(f"HP order must be a non-negative integer, got {C}")
        spec = SumMap.shared(HermiteBasis.from_length_scale(length_scale, int(C)), dim)
        hp_rows.append((int(C), approx_error(X, Y, spec, length_scale), 0.0))
    rng = substream(seed, "rff")
    rf_rows = []
    for A in counts:
        errs = [approx_error(X, Y, RandomFourierMap.draw(int(A), dim, length_scale, int(rng.integers(2**31))),
                             length_scale) for _ in range(redraws)]
        rf_rows.append((int(A), float(np.mean(errs)), float(np.std(errs))))
    return hp_rows, rf_rows


def pooled_length_scale(X, Y, max_pairs: int = 100_000, seed: int = 0) -> float:
    return median_heuristic(np.vstack([np.asarray(X).reshape(len(X), -1), np.asarray(Y).reshape(len(Y), -1)]),
                            max_pairs, seed)


# ---------------------------------------------------------------------------
# 2-D Gaussian mixture


@dataclass
class GmmTask:
    spec: GmmSpec
    scaler: MinMaxScaler
    X_train: np.ndarray
    y_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray


def gmm_task(seed: int = 0, n: int = 10_000, spacing: float = 1.0, std: float = 0.2,
             test_fraction: float = 0.1, margin_stds: float = 4.0) -> GmmTask:
    """Sample the mixture, split it, and fix the a-priori scaling box.

    The box comes from the mixture specification (means +- ``margin_stds``
    stds), not from the sample, so it is safe to use in private runs.
    """
    spec = GmmSpec.grid(spacing=spacing, std=std)
    rng = substream(seed, "data")
    X, y = gmm_sample(spec, n, rng)
    Xtr, ytr, Xte, yte = train_test_split(X, y, test_fraction, rng)
    return GmmTask(spec, MinMaxScaler(*spec.bounds(margin_stds)), Xtr, ytr, Xte, yte)


def run_gmm(task: GmmTask, cfg: TrainConfig, num_samples: int = 5000) -> dict:
    """Train on the task, draw ``num_samples`` points and score them."""
    result = train(task.scaler.transform(task.X_train), task.y_train, task.spec.num_classes, cfg)
    Xg, yg = generate(result.model, num_samples, result.sampler, substream(cfg.seed, "eval"))
    Xg = task.scaler.inverse(Xg)
    return {
        "result": result,
        "samples": (Xg, yg),
        "nll": gmm_nll(Xg, yg, task.spec),
        "real_nll": gmm_nll(task.X_test, task.y_test, task.spec),
        "coverage": mode_coverage(Xg, yg, task.spec),
    }


# ---------------------------------------------------------------------------
# categorical tables


def run_tabular(table: dict, schema: TabularSchema, cfg: TrainConfig, num_samples: int | None = None,
                alpha: int = 3, max_tuples: int = 2000) -> dict:
    """Train on an encoded table, sample a synthetic table and score its
    ``alpha``-way marginals against the real one."""
    X, y = encode(table, schema)
    result: TrainResult = train(X, y, schema.num_classes, cfg, blocks=schema.blocks())
    n = len(y) if num_samples is None else num_samples
    Xg, yg = generate(result.model, n, result.sampler, substream(cfg.seed, "eval"))
    synth = decode(Xg, schema, yg)
    real = {c: np.asarray(table[c]) for c in schema.column_names}
    err = alpha_way_error(real, synth, alpha, max_tuples, substream(cfg.seed, "eval"))
    return {"result": result, "synth": synth, "alpha_error": err}


def independent_baseline(table: dict, schema: TabularSchema, seed: int = 0, alpha: int = 3,
                         max_tuples: int = 2000) -> dict:
    """``alpha``-way error of a table resampled from its own 1-way marginals."""
    real = {c: np.asarray(table[c]) for c in schema.column_names}
    synth = independent_marginals(real, len(real[schema.label]), substream(seed, "eval"))
    return alpha_way_error(real, synth, alpha, max_tuples, substream(seed, "eval"))
