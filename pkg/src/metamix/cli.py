"""Command line front end: train / ssl / audit / gradcheck.

Runs are configured by a flat key=value file plus command line overrides
(overrides win). Every training run writes three artifacts into --out:
config.json (the fully resolved option set), metrics.jsonl (one record per
epoch), summary.json. Exit codes: 0 success, 2 bad configuration, 3 data
problem, 4 non-finite numerics.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data as dataio
from . import meta, mixing, nets, semi, smoothness
from .data import DataError, Dataset, Splits, SplitSpec, SyntheticSpec
from .engine import NonFiniteError
from .meta import TrainConfig
from .nets import OptimizerConfig
from .reporting import write_records

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


class DataStageError(Exception):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_int(text: str):
    return None if text.strip().lower() == "none" else int(text)


def _opt_str(text: str):
    return None if text.strip().lower() == "none" else text


# name -> (converter, default, help); names double as config file keys
_DATA_OPTS = {
    "data": (str, "synthetic", "dataset source: synthetic | idx"),
    "classes": (int, 2, "synthetic: number of classes"),
    "per_class": (int, 250, "synthetic: training samples per class"),
    "dim": (int, 10, "synthetic: input dimension"),
    "separation": (float, 4.0, "synthetic: distance between class means"),
    "noise_sigma": (float, 1.0, "synthetic: sample noise scale"),
    "corrupt": (float, 0.0, "fraction of training labels flipped"),
    "test_per_class": (_opt_int, None, "synthetic: test samples per class"),
    "meta_val_per_class": (int, 10, "meta-validation samples per class"),
    "train_images": (_opt_str, None, "idx: training images file"),
    "train_labels": (_opt_str, None, "idx: training labels file"),
    "test_images": (_opt_str, None, "idx: test images file"),
    "test_labels": (_opt_str, None, "idx: test labels file"),
    "n_classes": (int, 10, "idx: number of classes"),
    "limit_train": (_opt_int, None, "cap on training samples after loading"),
}

_TRAIN_OPTS = {
    "out": (str, None, "output directory (default runs/<subcommand>)"),
    "mode": (str, "metamixup",
             "metamixup | mixup-beta | mixup-fixed | baseline"),
    "seed": (int, 0, "run seed"),
    "epochs": (int, 10, "training epochs"),
    "batch_size": (int, 64, "training batch size"),
    "meta_batch_size": (_opt_int, None, "validation batch per step"),
    "lr": (float, 0.1, "learning rate"),
    "momentum": (float, 0.9, "SGD momentum"),
    "weight_decay": (float, 1e-4, "L2 coefficient folded into the gradient"),
    "cosine": (_bool, False, "cosine-anneal the learning rate"),
    "policy_step_size": (float, 5.0, "step on the interpolation logits"),
    "policy_updates": (int, 1, "hypergradient steps per batch"),
    "hypergrad": (str, "exact", "hypergradient mode: exact | fd"),
    "fd_epsilon": (float, 1e-4, "finite-difference probe step"),
    "lambda": (float, 0.5, "mixup-fixed coefficient"),
    "beta_alpha": (float, 1.0, "mixup-beta Beta(a, a) parameter"),
    "augment": (str, "none", "batch augmentation: none | flip | flip-translate"),
    "arch": (_opt_str, None, "model: mlp | mlp:H1,H2 | cnn3 (default sized from data)"),
    **_DATA_OPTS,
}

_SSL_OPTS = {
    **_TRAIN_OPTS,
    "labeled_per_class": (int, 25, "labeled samples kept per class"),
    "unsup_weight": (float, 1.0, "weight on the pseudo-label loss"),
    "sigma0": (float, 0.95, "initial confidence threshold"),
    "sigma_decrement": (float, 0.05, "threshold drop per period"),
    "sigma_period": (int, 30, "epochs between threshold drops"),
    "sigma_floor": (float, 0.5, "lowest threshold"),
    "apl": (_bool, True, "lower the threshold on schedule"),
}

_AUDIT_OPTS = {
    "out": (str, None, "output directory"),
    "seed": (int, 0, "sampling seed"),
    "field": (str, "network", "audited field: network | quadratic"),
    "diag": (str, "1,3", "quadratic: diagonal of A"),
    "model": (_opt_str, None, "network: checkpoint to audit (default fresh init)"),
    "arch": (_opt_str, None, "network: architecture when no checkpoint given"),
    "n_pairs": (int, 10_000, "pairs for estimation and a fresh audit"),
    "safety": (float, 1.2, "multiplier on the estimated constant"),
    **{k: _DATA_OPTS[k] for k in ("data", "classes", "per_class", "dim",
                                  "separation", "noise_sigma", "train_images",
                                  "train_labels", "n_classes")},
}

_GRADCHECK_OPTS = {
    "seed": (int, 0, "problem seed"),
    "fd_epsilon": (float, 1e-4, "finite-difference step"),
    "tolerance": (float, 1e-4, "max relative error allowed"),
}

_SUBCOMMANDS = {
    "train": _TRAIN_OPTS,
    "ssl": _SSL_OPTS,
    "audit": _AUDIT_OPTS,
    "gradcheck": _GRADCHECK_OPTS,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metamix", description="meta-learned mixup training laboratory")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for name, table in _SUBCOMMANDS.items():
        sub = subs.add_parser(name)
        sub.add_argument("--config", default=None,
                         help="key=value file; command line flags override it")
        for key, (_, default, help_text) in table.items():
            sub.add_argument(f"--{key.replace('_', '-')}", dest=key,
                             default=None, metavar="V",
                             help=f"{help_text} (default {default})")
    return parser


def parse_config_file(path) -> dict[str, str]:
    raw = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw


def resolve_options(table: dict, args: dict) -> dict:
    resolved = {key: default for key, (_, default, _) in table.items()}
    layers = []
    if args.get("config"):
        layers.append(parse_config_file(args["config"]))
    layers.append({k: v for k, v in args.items()
                   if k in table and v is not None})
    for layer in layers:
        for key, value in layer.items():
            if key not in table:
                raise ConfigError(f"unknown option {key!r}")
            if isinstance(value, str):
                convert = table[key][0]
                try:
                    value = convert(value)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {exc}")
            resolved[key] = value
    return resolved


def _parse_arch(text, input_shape: tuple, n_classes: int):
    if text is None or text == "auto":
        return None
    if text == "cnn3":
        if len(input_shape) != 3:
            raise ConfigError("arch cnn3 needs image-shaped inputs [h, w, c]")
        return nets.cnn3(input_shape[:2], input_shape[2], n_classes)
    if text == "mlp" or text.startswith("mlp:"):
        hidden = [32]
        if ":" in text:
            try:
                hidden = [int(h) for h in text.split(":", 1)[1].split(",")]
            except ValueError:
                raise ConfigError(f"bad arch spec {text!r}")
        return nets.mlp(int(np.prod(input_shape)), hidden, n_classes)
    raise ConfigError(f"unknown arch {text!r}")


def _load_idx_pair(images, labels, n_classes, what) -> Dataset:
    if images is None or labels is None:
        raise ConfigError(f"idx data needs {what}_images and {what}_labels")
    try:
        return dataio.load_idx(images, labels, n_classes)
    except OSError as exc:
        raise DataStageError(f"cannot read {what} set: {exc}")


def _load_splits(opts: dict) -> Splits:
    if opts["data"] == "synthetic":
        spec = SyntheticSpec(classes=opts["classes"], per_class=opts["per_class"],
                             dim=opts["dim"], separation=opts["separation"],
                             noise_sigma=opts["noise_sigma"])
        return dataio.standard_splits(
            spec, seed=opts["seed"], corrupt=opts["corrupt"],
            meta_val_per_class=opts["meta_val_per_class"],
            test_per_class=opts["test_per_class"])
    if opts["data"] != "idx":
        raise ConfigError(f"unknown data source {opts['data']!r}")
    train = _load_idx_pair(opts["train_images"], opts["train_labels"],
                           opts["n_classes"], "train")
    test = _load_idx_pair(opts["test_images"], opts["test_labels"],
                          opts["n_classes"], "test")
    if opts["limit_train"]:
        train = train.subset(np.arange(min(opts["limit_train"], len(train))))
    train, meta_val = dataio.split_meta_validation(
        train, SplitSpec(opts["meta_val_per_class"], seed=opts["seed"]))
    if opts["corrupt"] > 0:
        train = dataio.corrupt_labels(train, opts["corrupt"],
                                      np.random.default_rng(opts["seed"] + 1))
    return Splits(train=train, meta_val=meta_val, test=test)


def _train_config(opts: dict, splits: Splits) -> TrainConfig:
    lam = opts["lambda"]
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    arch = _parse_arch(opts["arch"], splits.train.inputs.shape[1:],
                       splits.train.n_classes)
    optimizer = OptimizerConfig(
        learning_rate=opts["lr"], momentum=opts["momentum"],
        weight_decay=opts["weight_decay"], cosine_anneal=opts["cosine"],
        horizon=opts["epochs"])
    kwargs = dict(
        epochs=opts["epochs"], batch_size=opts["batch_size"],
        meta_batch_size=opts["meta_batch_size"],
        policy_step_size=opts["policy_step_size"],
        policy_updates=opts["policy_updates"], hypergrad_mode=opts["hypergrad"],
        fd_epsilon=opts["fd_epsilon"], mode=opts["mode"],
        beta_alpha=opts["beta_alpha"], fixed_lambda=lam,
        augment=opts["augment"], seed=opts["seed"], arch=arch,
        optimizer=optimizer)
    if "sigma0" in opts:
        kwargs.update(
            unsup_weight=opts["unsup_weight"], sigma0=opts["sigma0"],
            sigma_decrement=opts["sigma_decrement"],
            sigma_period=opts["sigma_period"], sigma_floor=opts["sigma_floor"],
            apl=opts["apl"])
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc))


def _out_dir(opts: dict, subcommand: str) -> Path:
    out = Path(opts["out"] or f"runs/{subcommand}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo_config(out: Path, opts: dict, subcommand: str) -> None:
    echo = {"subcommand": subcommand, **opts}
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True,
                                                default=str) + "\n")


def _write_run(out: Path, report, t0: float) -> None:
    with open(out / "metrics.jsonl", "w") as fh:
        write_records(report.records, fh)
    nets.save_model(report.model, out / "model.npz")
    last = report.records[-1]
    summary = {
        "epochs_run": len(report.records),
        "final_test_error": report.final_test_error,
        "final_train_loss": last.train_loss,
        "final_val_loss": last.val_loss,
        "final_lambda_mean": last.lambda_mean,
        "total_wall_seconds": time.perf_counter() - t0,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def cmd_train(opts: dict) -> int:
    t0 = time.perf_counter()
    out = _out_dir(opts, "train")
    splits = _load_splits(opts)
    config = _train_config(opts, splits)
    _echo_config(out, opts, "train")
    report = meta.train_supervised(splits, config)
    _write_run(out, report, t0)
    print(f"final test error {report.final_test_error:.4f} "
          f"({len(report.records)} epochs) -> {out}")
    return EXIT_OK


def cmd_ssl(opts: dict) -> int:
    t0 = time.perf_counter()
    out = _out_dir(opts, "ssl")
    splits = _load_splits(opts)
    try:
        labeled, unlabeled = dataio.split_labeled_pool(
            splits.train, opts["labeled_per_class"], seed=opts["seed"])
    except DataError as exc:
        raise ConfigError(str(exc))
    config = _train_config(opts, splits)
    _echo_config(out, opts, "ssl")
    report = semi.train_ssl(
        Splits(train=labeled, meta_val=splits.meta_val, test=splits.test),
        unlabeled, config)
    _write_run(out, report, t0)
    last = report.records[-1]
    print(f"final test error {report.final_test_error:.4f}, "
          f"{last.accepted_count} pseudo labels in use -> {out}")
    return EXIT_OK


def _audit_field(opts: dict, rng: np.random.Generator):
    """Returns (anchors, target) where target is a scalar field or a model."""
    if opts["field"] == "quadratic":
        try:
            diag = np.array([float(v) for v in opts["diag"].split(",")])
        except ValueError:
            raise ConfigError(f"bad diag {opts['diag']!r}")
        anchors = rng.normal(scale=2.0, size=(max(200, opts["per_class"]),
                                              len(diag)))
        return anchors, smoothness.QuadraticField(np.diag(diag))
    if opts["field"] != "network":
        raise ConfigError(f"unknown field {opts['field']!r}")
    if opts["data"] == "idx":
        train = _load_idx_pair(opts["train_images"], opts["train_labels"],
                               opts["n_classes"], "train")
    else:
        spec = SyntheticSpec(classes=opts["classes"], per_class=opts["per_class"],
                             dim=opts["dim"], separation=opts["separation"],
                             noise_sigma=opts["noise_sigma"])
        train = dataio.make_synthetic(spec, np.random.default_rng(opts["seed"]))
    if opts["model"]:
        try:
            model = nets.load_model(opts["model"])
        except OSError as exc:
            raise DataStageError(f"cannot read checkpoint: {exc}")
    else:
        arch = _parse_arch(opts["arch"] or "mlp:16,8",
                           train.inputs.shape[1:], train.n_classes)
        if all(isinstance(l, nets.Dense) for l in arch.layers):
            # constant estimates need differentiable gradients; swap relu/tanh
            # hidden layers for softplus when auditing a fresh dense net
            arch = nets.Architecture(arch.input_shape, tuple(
                nets.Dense(l.width, "softplus" if l.activation else None)
                for l in arch.layers))
        model = nets.build_model(arch, rng)
    return train.inputs.reshape(len(train.inputs), -1), model


def cmd_audit(opts: dict) -> int:
    out = _out_dir(opts, "audit")
    rng = np.random.default_rng(opts["seed"])
    anchors, target = _audit_field(opts, rng)
    sampler = lambda n, r: smoothness.sample_pairs(anchors, n, r)
    est_rng = np.random.default_rng(opts["seed"] + 1)
    fresh_rng = np.random.default_rng(opts["seed"] + 2)
    if isinstance(target, nets.ModelState):
        estimate = smoothness.estimate_kappa_network(
            target, sampler, opts["n_pairs"], est_rng)
        kappa = opts["safety"] * estimate.kappa
        report, channel = smoothness.audit_network(
            target, kappa, sampler(opts["n_pairs"], fresh_rng))
    else:
        estimate = smoothness.estimate_kappa(
            target, sampler, opts["n_pairs"], est_rng)
        kappa = opts["safety"] * estimate.kappa
        report = smoothness.audit_gap_bound(
            target, kappa, sampler(opts["n_pairs"], fresh_rng))
        channel = None
    _echo_config(out, opts, "audit")
    payload = {"estimate": asdict(estimate), "safety": opts["safety"],
               "audited_kappa": kappa, "worst_channel": channel,
               **report.summary()}
    (out / "audit.json").write_text(json.dumps(payload, indent=2) + "\n")
    smoothness.write_audit_csv(report, out / "pairs.csv")
    # violations are a reported outcome, not a run failure: the estimated
    # constant is a lower bound, so the report is the deliverable either way
    print(f"kappa_hat {estimate.kappa:.4g}, audited at {kappa:.4g}: "
          f"{report.violations} violations, max ratio {report.max_ratio:.6f} "
          f"-> {out}")
    return EXIT_OK


def cmd_gradcheck(opts: dict) -> int:
    rng = np.random.default_rng(opts["seed"])
    model = nets.build_model(nets.mlp(4, [8], 3), rng)
    x = rng.normal(size=(8, 4))
    y = nets.one_hot(rng.integers(0, 3, 8), 3)
    vx = rng.normal(size=(8, 4))
    vy = nets.one_hot(rng.integers(0, 3, 8), 3)
    perm = mixing.sample_pairing(8, rng)
    policy = mixing.init_policy(8, rng)
    exact = meta.meta_lambda_gradient(model, (x, y), perm, policy, (vx, vy),
                                      eta=0.1, mode="exact")
    fd = meta.meta_lambda_gradient(model, (x, y), perm, policy, (vx, vy),
                                   eta=0.1, mode="fd",
                                   fd_epsilon=opts["fd_epsilon"])
    from .engine import max_relative_error
    err = max_relative_error(exact.grad, fd.grad)
    ok = err <= opts["tolerance"]
    print(f"hypergradient exact vs finite differences: "
          f"max relative error {err:.3e} "
          f"{'PASS' if ok else 'FAIL'} (tolerance {opts['tolerance']:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


_DISPATCH = {"train": cmd_train, "ssl": cmd_ssl, "audit": cmd_audit,
             "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        opts = resolve_options(_SUBCOMMANDS[args.subcommand], vars(args))
        return _DISPATCH[args.subcommand](opts)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataStageError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonFiniteError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
