"""Command-line front end.

Subcommands::

    dphp features-bench --config FILE --out DIR
    dphp train          --config FILE --out DIR
    dphp generate       --model FILE --n INT --seed INT --out FILE
    dphp eval           --task {nll,marginals,coverage,downstream} --real FILE --synth FILE --out FILE
    dphp calibrate      --epsilon E --delta D --releases K --method M

Configs are YAML (JSON is valid YAML); ``--set section.key=value`` overrides a
key after loading.  Exit codes: 0 success, 2 invalid configuration or input,
3 runtime/numerical failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import plots
from .data import GmmSpec, MinMaxScaler, TabularSchema, decode, encode, read_csv, write_csv
from .errors import NumericalError
from .experiments import features_benchmark, gmm_task, pooled_length_scale, two_sample_data
from .generator import LabelSampler, TrainConfig, generate, load_model, save_model, train
from .metrics import alpha_way_error, downstream_logreg, gmm_nll, mode_coverage
from .privacy import METHODS, PrivacyBudget, compose_product_releases
from .rng import substream

logger = logging.getLogger("dphp")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

DEFAULTS = {
    "features-bench": {
        "seed": 0,
        "bench": {"n": 100, "shift": 1.0, "length_scale": None, "hp_orders": list(range(0, 21)),
                  "rf_counts": [10, 20, 50, 100, 200, 500, 1000, 2000], "rf_redraws": 10},
    },
    "train": {
        "task": "gmm2d",
        "seed": 0,
        "samples": 5000,
        "gmm": {"n": 10000, "spacing": 1.0, "std": 0.2, "test_fraction": 0.1, "margin_stds": 4.0},
        "tabular": {"data": None, "schema": None},
        "train": {},
        "privacy": None,
    },
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in over.items():
        where = f"{path}{key}"
        if key not in out:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(out[key], dict) and isinstance(value, dict) and key not in ("train",):
            out[key] = _merge(out[key], value, where + ".")
        else:
            out[key] = value
    return out


def _apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    key, raw = assignment.split("=", 1)
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        if not isinstance(node[p], dict):
            raise ConfigError(f"cannot override inside non-mapping key {p!r}")
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(command: str, path, overrides=()) -> dict:
    """Defaults, then the file, then ``key=value`` overrides."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {str(p)!r} not found")
        try:
            raw = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {str(p)!r} is not valid YAML: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a mapping")
    for o in overrides:
        _apply_override(raw, o)
    cfg = _merge(DEFAULTS[command], raw)
    if command == "train" and isinstance(cfg.get("privacy"), dict) and not cfg["privacy"]:
        cfg["privacy"] = None
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n", encoding="utf-8")


def _train_config(cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train") or {})
    for forbidden in ("seed", "budget"):
        if forbidden in section:
            raise ConfigError(f"set {forbidden!r} at the top level / in 'privacy', not under 'train'")
    budget = None
    if cfg.get("privacy") is not None:
        p = cfg["privacy"]
        unknown = set(p) - {"epsilon", "delta", "split_fraction"}
        if unknown:
            raise ConfigError(f"unknown privacy keys {sorted(unknown)}")
        budget = PrivacyBudget(float(p["epsilon"]), float(p["delta"]), float(p.get("split_fraction", 0.8)))
    try:
        return TrainConfig(seed=int(cfg["seed"]), budget=budget, **section)
    except TypeError as exc:
        raise ConfigError(f"bad 'train' section: {exc}") from exc


# ---------------------------------------------------------------------------
# commands


def cmd_features_bench(args) -> int:
    cfg = load_config("features-bench", args.config, args.set)
    b = cfg["bench"]
    if not b["hp_orders"]:
        raise ConfigError("bench.hp_orders must not be empty")
    if int(b["n"]) < 2:
        raise ConfigError("bench.n must be at least 2")
    seed = int(cfg["seed"])
    X, Y = two_sample_data(seed, int(b["n"]), float(b["shift"]))
    l = float(b["length_scale"]) if b["length_scale"] is not None else pooled_length_scale(X, Y, seed=seed)
    hp, rf = features_benchmark(X, Y, l, b["hp_orders"], b["rf_counts"], int(b["rf_redraws"]), seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["order_or_count", "error", "stddev"]
    for name, rows in (("bench_hp.csv", hp), ("bench_rf.csv", rf)):
        write_csv(out / name, {h: [r[i] for r in rows] for i, h in enumerate(header)}, header)
    h = config_hash(cfg)
    stamp = f"config_hash={h} seed={seed}"
    plots.bench_figure(hp, rf, out / "bench.png", stamp)
    summary = {"config": cfg, "config_hash": h, "seed": seed, "length_scale": l,
               "hp": [dict(zip(header, r)) for r in hp], "rf": [dict(zip(header, r)) for r in rf],
               "artifacts": ["bench_hp.csv", "bench_rf.csv", "bench.png"]}
    _write_json(out / "bench.json", summary)
    print(json.dumps({"length_scale": l, "hp": hp[:3], "out": str(out)}))
    return EXIT_OK


def _load_tabular(cfg: dict):
    t = cfg["tabular"]
    if not t.get("schema"):
        raise ConfigError("tabular task needs tabular.schema")
    if not t.get("data"):
        raise ConfigError("tabular task needs tabular.data")
    for key in ("schema", "data"):
        if not Path(t[key]).is_file():
            raise ConfigError(f"tabular.{key} file {t[key]!r} not found")
    schema = TabularSchema.load(t["schema"])
    table = read_csv(t["data"])
    missing = [c for c in schema.column_names if c not in table]
    if missing:
        raise ConfigError(f"data file lacks schema columns {missing}")
    return schema, table


def cmd_train(args) -> int:
    cfg = load_config("train", args.config, args.set)
    if cfg["task"] not in ("gmm2d", "tabular"):
        raise ConfigError(f"task must be 'gmm2d' or 'tabular', got {cfg['task']!r}")
    tcfg = _train_config(cfg)
    seed = tcfg.seed
    h = config_hash(cfg)
    out = Path(args.out)
    n_samples = int(cfg["samples"])
    if n_samples < 0:
        raise ConfigError("samples must be non-negative")

    if cfg["task"] == "gmm2d":
        g = cfg["gmm"]
        task = gmm_task(seed, int(g["n"]), float(g["spacing"]), float(g["std"]), float(g["test_fraction"]),
                        float(g["margin_stds"]))
        result = train(task.scaler.transform(task.X_train), task.y_train, task.spec.num_classes, tcfg)
        decoder = {"kind": "gmm2d", "lo": task.scaler.lo.tolist(), "hi": task.scaler.hi.tolist(),
                   "columns": ["x0", "x1"], "gmm": task.spec.to_dict()}
    else:
        schema, table = _load_tabular(cfg)
        X, y = encode(table, schema)
        result = train(X, y, schema.num_classes, tcfg, blocks=schema.blocks())
        decoder = {"kind": "tabular", "schema": schema.to_dict()}

    meta = {"config_hash": h, "seed": seed, "decoder": decoder, "label_probs": result.sampler.probs.tolist()}
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.model, out / "model.json", meta)

    table_out, Xs, ys = _generate_table(result.model, meta, n_samples, seed)
    write_csv(out / "samples.csv", table_out, list(table_out))
    report = {"config": cfg, "config_hash": h, "seed": seed, "train": result.report,
              "artifacts": ["model.json", "samples.csv", "samples.png", "loss.png"]}
    stamp = f"config_hash={h} seed={seed}"
    if cfg["task"] == "gmm2d":
        write_csv(out / "test.csv", {"x0": task.X_test[:, 0], "x1": task.X_test[:, 1], "label": task.y_test},
                  ["x0", "x1", "label"])
        report["artifacts"].append("test.csv")
        report["evaluation"] = {
            "samples": n_samples,
            "nll": gmm_nll(Xs, ys, task.spec) if n_samples else None,
            "real_nll": gmm_nll(task.X_test, task.y_test, task.spec),
            "coverage": mode_coverage(Xs, ys, task.spec),
        }
        plots.scatter_figure(Xs, ys, out / "samples.png", task.spec.means,
                             f"{n_samples} generated samples", stamp)
    else:
        real = {c: table[c] for c in schema.column_names}
        cat = [c.name for c in schema.columns if c.kind != "numeric"] + [schema.label]
        if n_samples:
            err = alpha_way_error({c: real[c] for c in cat}, {c: table_out[c] for c in cat},
                                  min(3, len(cat)), 2000, substream(seed, "eval"))
            report["evaluation"] = {"samples": n_samples, "alpha_way": err}
        plots.marginals_figure({c: real[c] for c in cat}, {c: table_out[c] for c in cat}, out / "samples.png",
                               stamp)
    plots.loss_figure([e["loss"] for e in result.report["epochs"]], out / "loss.png", stamp)
    _write_json(out / "report.json", report)
    print(json.dumps({"config_hash": h, "final_loss": result.report["epochs"][-1]["loss"],
                      **{k: v for k, v in report.get("evaluation", {}).items() if k != "alpha_way"}}))
    return EXIT_OK


def _generate_table(model, meta: dict, n: int, seed: int):
    sampler = LabelSampler(meta["label_probs"])
    X, y = generate(model, n, sampler, substream(seed, "eval"))
    dec = meta["decoder"]
    if dec["kind"] == "gmm2d":
        X = MinMaxScaler(dec["lo"], dec["hi"]).inverse(X)
        return {"x0": X[:, 0], "x1": X[:, 1], "label": y}, X, y
    schema = TabularSchema.from_dict(dec["schema"])
    table = decode(X, schema, y)
    return {c: table[c] for c in schema.column_names}, X, y


def cmd_generate(args) -> int:
    if args.n < 0:
        raise ConfigError("--n must be non-negative")
    if not Path(args.model).is_file():
        raise ConfigError(f"model file {args.model!r} not found")
    model, meta = load_model(args.model)
    if "decoder" not in meta:
        raise ConfigError("checkpoint carries no decoder metadata")
    table, _, _ = _generate_table(model, meta, args.n, args.seed)
    write_csv(args.out, table, list(table))
    return EXIT_OK


def _read_points(path):
    if not Path(path).is_file():
        raise ConfigError(f"file {path!r} not found")
    t = read_csv(path)
    for c in ("x0", "x1", "label"):
        if c not in t:
            raise ConfigError(f"{path}: expected columns x0, x1, label")
    return np.column_stack([t["x0"], t["x1"]]), t["label"].astype(np.int64)


def _gmm_spec(args) -> GmmSpec:
    if args.config is None:
        return GmmSpec.grid()
    g = load_config("train", args.config, args.set)["gmm"]
    return GmmSpec.grid(float(g["spacing"]), std=float(g["std"]))


def cmd_eval(args) -> int:
    params = {k: v for k, v in vars(args).items() if k not in ("func",)}
    report = {"task": args.task, "params": params, "config_hash": config_hash(params), "seed": args.seed}
    if args.task in ("nll", "coverage"):
        spec = _gmm_spec(args)
        Xr, yr = _read_points(args.real)
        Xs, ys = _read_points(args.synth)
        report["gmm"] = spec.to_dict()
        if args.task == "nll":
            report.update(synth_nll=gmm_nll(Xs, ys, spec), real_nll=gmm_nll(Xr, yr, spec))
            report["gap"] = report["synth_nll"] - report["real_nll"]
        else:
            radius = 2 * spec.std if args.radius is None else args.radius
            report.update(radius=radius, min_count=args.min_count,
                          synth_coverage=mode_coverage(Xs, ys, spec, radius, args.min_count),
                          real_coverage=mode_coverage(Xr, yr, spec, radius, args.min_count))
    else:
        for p in (args.real, args.synth):
            if not Path(p).is_file():
                raise ConfigError(f"file {p!r} not found")
        real, synth = read_csv(args.real), read_csv(args.synth)
        cols = [c for c in real if c in synth]
        if not cols:
            raise ConfigError("real and synthetic tables share no columns")
        if args.task == "marginals":
            res = alpha_way_error({c: real[c] for c in cols}, {c: synth[c] for c in cols}, args.alpha,
                                  args.max_tuples, substream(args.seed, "eval"), cols)
            report.update(res)
        else:
            if args.label not in cols:
                raise ConfigError(f"label column {args.label!r} missing")
            feats = [c for c in cols if c != args.label]
            Xs = np.column_stack([synth[c] for c in feats])
            Xr = np.column_stack([real[c] for c in feats])
            ys, yr = synth[args.label].astype(np.int64), real[args.label].astype(np.int64)
            K = int(max(ys.max(initial=0), yr.max(initial=0)) + 1)
            report.update(downstream_logreg(Xs, ys, Xr, yr, K, args.epochs, args.lr), features=feats)
    _write_json(args.out, report)
    print(json.dumps({k: v for k, v in report.items() if k not in ("params", "gmm")}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    calib = compose_product_releases(args.releases, args.epsilon, args.delta, args.method)
    out = calib.to_dict()
    out["config_hash"] = config_hash({"epsilon": args.epsilon, "delta": args.delta, "releases": args.releases,
                                      "method": args.method})
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dphp", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features-bench", help="HP vs. random Fourier kernel approximation error")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_features_bench)

    p = sub.add_parser("train", help="train a generator from a config")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample a trained generator to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="score synthetic data against real data")
    p.add_argument("--task", required=True, choices=("nll", "marginals", "coverage", "downstream"))
    p.add_argument("--real", required=True)
    p.add_argument("--synth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=int, default=3)
    p.add_argument("--max-tuples", type=int, default=2000)
    p.add_argument("--radius", type=float, default=None)
    p.add_argument("--min-count", type=int, default=3)
    p.add_argument("--label", default="label")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="train config whose gmm section defines the mixture")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("calibrate", help="Gaussian-mechanism noise multiplier")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--releases", type=int, default=1)
    p.add_argument("--method", choices=METHODS, default="analytic")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
