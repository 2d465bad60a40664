"""Conditional feedforward generator trained on (privatized) mean embeddings."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .embedding import mean_embedding, one_hot
from .errors import NumericalError
from .featuremaps import CombinedMap, ProductMap, RandomFourierMap, SumMap, subsample_dims
from .hermite import HermiteBasis, median_heuristic
from .privacy import (PrivacyBudget, calibrate_sigma, compose_product_releases, privatize,
                      privatize_class_counts, sensitivity_bound, split_budget)
from .rng import substream

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "dphp-generator/1"
DECODERS = ("identity", "sigmoid", "softmax")


@dataclass
class GeneratorModel:
    latent_dim: int
    num_classes: int
    hidden: tuple[int, ...]
    activation: str
    blocks: tuple[tuple[str, int], ...]
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)
    seed: int = 0

    @property
    def out_dim(self) -> int:
        return sum(w for _, w in self.blocks)

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def set_params(self, flat: list[np.ndarray]) -> None:
        self.weights = [np.asarray(p) for p in flat[0::2]]
        self.biases = [np.asarray(p) for p in flat[1::2]]

    def graph(self, z: np.ndarray, labels, param_nodes: list[ad.Node] | None = None) -> ad.Node:
        """Forward pass as an autodiff graph; returns the decoded batch node."""
        z = np.asarray(z, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] != self.latent_dim:
            raise ValueError(f"latent batch must have shape (n, {self.latent_dim}), got {z.shape}")
        labels = np.asarray(labels)
        if labels.shape[0] != z.shape[0]:
            raise ValueError("latent batch and labels differ in length")
        if param_nodes is None:
            param_nodes = [ad.constant(p) for p in self.params]
        h = ad.constant(np.concatenate([z, one_hot(labels, self.num_classes)], axis=1))
        act = ad.relu if self.activation == "relu" else ad.tanh
        n_layers = len(self.weights)
        for i in range(n_layers):
            h = ad.affine(h, param_nodes[2 * i], param_nodes[2 * i + 1])
            if i < n_layers - 1:
                h = act(h)
        return decode_blocks(h, self.blocks)

    def forward(self, z, labels) -> np.ndarray:
        return self.graph(z, labels).value

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "latent_dim": self.latent_dim,
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "blocks": [list(b) for b in self.blocks],
            "seed": self.seed,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorModel":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
        return cls(d["latent_dim"], d["num_classes"], tuple(d["hidden"]), d["activation"],
                   tuple((k, int(w)) for k, w in d["blocks"]),
                   [np.asarray(w, dtype=np.float64) for w in d["weights"]],
                   [np.asarray(b, dtype=np.float64) for b in d["biases"]], d["seed"])


def decode_blocks(h: ad.Node, blocks) -> ad.Node:
    parts, pos = [], 0
    for kind, width in blocks:
        piece = ad.columns(h, pos, pos + width)
        if kind == "sigmoid":
            piece = ad.sigmoid(piece)
        elif kind == "softmax":
            piece = ad.softmax(piece)
        elif kind != "identity":
            raise ValueError(f"unknown decoder {kind!r}")
        parts.append(piece)
        pos += width
    if pos != h.shape[1]:
        raise ValueError(f"decoder blocks cover {pos} columns, network emits {h.shape[1]}")
    return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)


def init_generator(latent_dim: int, num_classes: int, hidden, blocks, rng: np.random.Generator,
                   activation: str = "relu", seed: int = 0) -> GeneratorModel:
    """Glorot-uniform weights in ``[-a, a]``, ``a = sqrt(6 / (fan_in + fan_out))``; zero biases."""
    if activation not in ("relu", "tanh"):
        raise ValueError(f"activation must be relu or tanh, got {activation!r}")
    blocks = tuple((k, int(w)) for k, w in blocks)
    for kind, width in blocks:
        if kind not in DECODERS or width < 1:
            raise ValueError(f"bad decoder block {(kind, width)}")
    widths = [latent_dim + num_classes, *hidden, sum(w for _, w in blocks)]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        a = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return GeneratorModel(latent_dim, num_classes, tuple(hidden), activation, blocks, weights, biases, seed)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            out.append(p - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


@dataclass
class TrainConfig:
    """Everything that determines a training run besides the data."""

    epochs: int = 10
    batch_rate: float = 0.1
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 1.0
    gamma_target: str = "product"
    feature_map: str = "hp"  # "hp" (combined sum + product) or "rff"
    order_sum: int = 25
    order_prod: int = 25
    prod_dims: int = 2
    length_scale: float | None = None  # None: median heuristic (non-private only)
    length_scale_prod: float | None = None  # None: same as the sum kernel
    sum_kernel_scale: str = "global"  # "global" or "am_gm" (l / sqrt(D) per coordinate)
    feature_center: float = 0.5
    feature_scale: float = 1.0
    rff_features: int = 1000
    rff_single: bool = False  # float32 trig for large RFF maps
    latent_dim: int = 5
    hidden: tuple[int, ...] = (100, 100)
    activation: str = "relu"
    seed: int = 0
    budget: PrivacyBudget | None = None
    calibration: str = "analytic"
    product_release: str = "per_epoch"  # or "auto": release once when every coordinate is selected
    label_sampler: str = "uniform"  # or "empirical"
    label_budget_fraction: float = 0.0
    median_max_pairs: int = 100_000

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.gamma_target not in ("product", "sum"):
            raise ValueError("gamma_target must be 'product' or 'sum'")
        if not 0 < self.batch_rate <= 1:
            raise ValueError("batch_rate must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.feature_map not in ("hp", "rff"):
            raise ValueError("feature_map must be 'hp' or 'rff'")
        if self.product_release not in ("per_epoch", "auto"):
            raise ValueError("product_release must be 'per_epoch' or 'auto'")
        if self.label_sampler not in ("uniform", "empirical"):
            raise ValueError("label_sampler must be 'uniform' or 'empirical'")
        if self.sum_kernel_scale not in ("global", "am_gm"):
            raise ValueError("sum_kernel_scale must be 'global' or 'am_gm'")
        if not 0 <= self.label_budget_fraction < 1:
            raise ValueError("label_budget_fraction must lie in [0, 1)")
        if self.budget is not None and self.length_scale is None:
            raise ValueError("private training needs an explicit length_scale; the median heuristic reads the data")
        if self.budget is not None and self.label_sampler == "empirical" and self.label_budget_fraction == 0:
            raise ValueError("empirical label sampling under privacy needs label_budget_fraction > 0")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        d["budget"] = None if self.budget is None else asdict(self.budget)
        return d

    def batch_size(self, m: int) -> int:
        return max(1, int(round(self.batch_rate * m)))

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(1.0 / self.batch_rate - 1e-12)


class LabelSampler:
    def __init__(self, probs):
        self.probs = np.asarray(probs, dtype=np.float64)

    @classmethod
    def uniform(cls, num_classes: int) -> "LabelSampler":
        return cls(np.full(num_classes, 1.0 / num_classes))

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.choice(len(self.probs), size=n, p=self.probs)


def generate(model: GeneratorModel, n: int, sampler: LabelSampler, rng: np.random.Generator,
             hard: str = "sample") -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` labeled samples; softmax blocks become one-hot vectors.

    ``hard='sample'`` draws each categorical value from its softmax,
    ``'argmax'`` takes the mode.
    """
    if n == 0:
        return np.zeros((0, model.out_dim)), np.zeros(0, dtype=np.int64)
    labels = sampler(rng, n)
    z = rng.standard_normal((n, model.latent_dim))
    X = model.forward(z, labels)
    pos = 0
    for kind, width in model.blocks:
        if kind == "softmax":
            P = X[:, pos:pos + width]
            if hard == "argmax":
                idx = np.argmax(P, axis=1)
            else:
                u = rng.random((n, 1))
                idx = np.minimum((np.cumsum(P, axis=1) < u).sum(axis=1), width - 1)
            X[:, pos:pos + width] = np.eye(width)[idx]
        pos += width
    return X, labels


@dataclass
class TrainResult:
    model: GeneratorModel
    report: dict
    sampler: LabelSampler


def _build_maps(cfg: TrainConfig, X: np.ndarray):
    D = X.shape[1]
    if cfg.length_scale is None:
        l_sum = median_heuristic(X, cfg.median_max_pairs, seed=cfg.seed)
    else:
        l_sum = cfg.length_scale
    l_prod = cfg.length_scale_prod or l_sum
    if cfg.feature_map == "rff":
        rff = RandomFourierMap.draw(cfg.rff_features, D, l_sum, int(substream(cfg.seed, "rff").integers(2**31)),
                                     cfg.rff_single)
        return {"length_scale": l_sum, "rff": rff}
    l_coord = l_sum / math.sqrt(D) if cfg.sum_kernel_scale == "am_gm" else l_sum
    s = cfg.feature_scale
    sum_map = SumMap.shared(HermiteBasis.from_length_scale(l_coord * s, cfg.order_sum), D, cfg.feature_center, s)
    prod_basis = HermiteBasis.from_length_scale(l_prod * s, cfg.order_prod)
    if not 1 <= cfg.prod_dims <= D:
        raise ValueError(f"prod_dims must lie in [1, {D}]")
    # validate the product size cap up front
    product_map(cfg, prod_basis, tuple(range(cfg.prod_dims)), D)
    return {"length_scale": l_sum, "length_scale_prod": l_prod, "sum": sum_map, "prod_basis": prod_basis}


def product_map(cfg: TrainConfig, basis: HermiteBasis, dims, D: int) -> ProductMap:
    return ProductMap(basis, dims, D, cfg.feature_center, cfg.feature_scale)


def embedding_loss(x_gen: ad.Node, onehot: np.ndarray, terms) -> ad.Node:
    """``sum_j w_j ||mu_j(x_gen) - T_j||_F^2`` over ``terms = [(spec_j, T_j, w_j), ...]``."""
    loss = None
    for spec, target, weight in terms:
        if spec.kind == "rff":
            emb = ad.rff_embedding_layer(x_gen, spec, onehot)
        else:
            emb = ad.mean_embedding_layer(ad.feature_map_layer(x_gen, spec), onehot)
        part = ad.frobenius_loss(emb, target)
        if weight != 1.0:
            part = ad.scale(part, weight)
        loss = part if loss is None else loss + part
    return loss


def train(X, y, num_classes: int, cfg: TrainConfig, blocks=None) -> TrainResult:
    """Fit a generator to ``(X, y)`` (encoded, in ``[0, 1]``) by minimizing the
    augmented embedding distance.

    Release schedule: the sum embedding is computed (and privatized) once;
    each epoch re-draws the product coordinates and releases a fresh product
    embedding.  With ``product_release='auto'`` and every coordinate
    selected, the product embedding is identical across epochs and is
    released only once.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    m, D = X.shape
    blocks = tuple(blocks or (("sigmoid", 1),) * D)
    private = cfg.budget is not None
    maps = _build_maps(cfg, X)

    rng_init = substream(cfg.seed, "init")
    rng_sub = substream(cfg.seed, "subsample")
    rng_noise = substream(cfg.seed, "noise")
    rng_latent = substream(cfg.seed, "latent")

    model = init_generator(cfg.latent_dim, num_classes, cfg.hidden, blocks, rng_init, cfg.activation, cfg.seed)
    if model.out_dim != D:
        raise ValueError(f"decoder blocks emit {model.out_dim} columns, data has {D}")

    fixed_product = cfg.feature_map == "hp" and cfg.product_release == "auto" and cfg.prod_dims == D
    releases = 1 if fixed_product else cfg.epochs
    report: dict = {
        "num_samples": m,
        "input_dim": D,
        "num_classes": num_classes,
        "length_scale": maps["length_scale"],
        "private": private,
        "seed": cfg.seed,
        "epochs": [],
    }

    eps_label = 0.0
    sigma_sum = sigma_prod = None
    if private:
        budget = PrivacyBudget(cfg.budget.epsilon, cfg.budget.delta, cfg.budget.split_fraction, releases)
        (eps1, delta1), (eps2, delta2) = split_budget(budget)
        if cfg.feature_map == "rff":
            # a single embedding: the whole budget goes to one release
            eps1, delta1 = budget.epsilon, budget.delta
        if cfg.label_sampler == "empirical":
            eps_label = cfg.label_budget_fraction * eps1
            delta_label = cfg.label_budget_fraction * delta1
            eps1, delta1 = eps1 - eps_label, delta1 - delta_label
        sigma_sum = calibrate_sigma(eps1, delta1, cfg.calibration).with_sensitivity(sensitivity_bound(m))
        if cfg.feature_map == "hp":
            sigma_prod = compose_product_releases(releases, eps2, delta2, cfg.calibration) \
                .with_sensitivity(sensitivity_bound(m))
        report["privacy"] = {
            "epsilon_total": budget.epsilon,
            "delta_total": budget.delta,
            "split_fraction": budget.split_fraction,
            "E": releases if cfg.feature_map == "hp" else 0,
            "epsilon_sum": eps1,
            "delta_sum": delta1,
            "epsilon_product": eps2 if cfg.feature_map == "hp" else 0.0,
            "delta_product": delta2 if cfg.feature_map == "hp" else 0.0,
            "epsilon_labels": eps_label,
            "sigma_sum": sigma_sum.sigma,
            "sigma_product_per_release": sigma_prod.sigma if sigma_prod else None,
            "sensitivity": sensitivity_bound(m),
            "method": cfg.calibration,
        }

    if cfg.label_sampler == "uniform":
        sampler = LabelSampler.uniform(num_classes)
    elif private:
        sampler = LabelSampler(privatize_class_counts(y, num_classes, eps_label, delta_label, rng_noise))
    else:
        sampler = LabelSampler(np.bincount(y, minlength=num_classes) / m)
    report["label_probs"] = sampler.probs.tolist()

    privatizations = {"sum": 0, "product": 0}
    if cfg.feature_map == "rff":
        target_main = mean_embedding(X, y, maps["rff"], num_classes)
        if private:
            target_main = privatize(target_main, sigma_sum, rng_noise)
            privatizations["sum"] += 1
        report["feature_length"] = {"rff": maps["rff"].length}
    else:
        sum_map: SumMap = maps["sum"]
        target_sum = mean_embedding(X, y, sum_map, num_classes)
        if private:
            target_sum = privatize(target_sum, sigma_sum, rng_noise)
            privatizations["sum"] += 1
        prod_len = maps["prod_basis"].size ** cfg.prod_dims
        report["feature_length"] = {"sum": sum_map.length, "product": prod_len,
                                    "combined": sum_map.length + prod_len}

    n_gen = cfg.batch_size(m)
    report["batch_size"] = n_gen
    report["steps_per_epoch"] = cfg.steps_per_epoch
    opt = Adam(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    target_prod = prod_map = None

    for epoch in range(cfg.epochs):
        record: dict = {"epoch": epoch}
        if cfg.feature_map == "hp":
            if prod_map is None or not fixed_product:
                dims = subsample_dims(D, cfg.prod_dims, rng_sub)
                prod_map = product_map(cfg, maps["prod_basis"], dims, D)
                target_prod = mean_embedding(X, y, prod_map, num_classes)
                if private:
                    target_prod = privatize(target_prod, sigma_prod, rng_noise)
                    privatizations["product"] += 1
            record["prod_dims"] = list(prod_map.dims)
        losses = []
        for _ in range(cfg.steps_per_epoch):
            labels = sampler(rng_latent, n_gen)
            z = rng_latent.standard_normal((n_gen, cfg.latent_dim))
            params = [ad.Node(p) for p in model.params]
            x_gen = model.graph(z, labels, params)
            Y = one_hot(labels, num_classes)
            if cfg.feature_map == "rff":
                loss = embedding_loss(x_gen, Y, [(maps["rff"], target_main.matrix, 1.0)])
            else:
                g_prod, g_sum = (cfg.gamma, 1.0) if cfg.gamma_target == "product" else (1.0, cfg.gamma)
                loss = embedding_loss(x_gen, Y, [(prod_map, target_prod.matrix, g_prod),
                                                 (maps["sum"], target_sum.matrix, g_sum)])
            value = float(loss.value)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}")
            ad.backward(loss)
            model.set_params(opt.step(model.params, [p.grad for p in params]))
            losses.append(value)
        record["loss"] = float(np.mean(losses))
        report["epochs"].append(record)
        logger.info("epoch %d loss %.6g", epoch, record["loss"])

    report["privatizations"] = privatizations
    return TrainResult(model, report, sampler)


def save_model(model: GeneratorModel, path, extra: dict | None = None) -> None:
    d = model.to_dict()
    if extra:
        d["meta"] = extra
    Path(path).write_text(json.dumps(d, sort_keys=True))


def load_model(path) -> tuple[GeneratorModel, dict]:
    d = json.loads(Path(path).read_text())
    return GeneratorModel.from_dict(d), d.get("meta", {})
