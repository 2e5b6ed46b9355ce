"""Desk-scale MNIST run: small CNN, learned per-sample mixing.

Expects the four IDX files (plain or .gz) under data/mnist/ or a directory
given by --data/METAMIXUP_MNIST_DIR:

    train-images-idx3-ubyte  train-labels-idx1-ubyte
    t10k-images-idx3-ubyte   t10k-labels-idx1-ubyte

    python3 scripts/train_mnist.py --subset 5000 --epochs 15 --out runs/mnist
"""

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from metamix import data, meta, nets

FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
         "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def locate(root: Path) -> dict[str, Path]:
    found = {}
    for name in FILES:
        for candidate in (root / name, root / (name + ".gz")):
            if candidate.exists():
                found[name] = candidate
                break
    missing = [n for n in FILES if n not in found]
    if missing:
        sys.exit(f"missing under {root}: {', '.join(missing)} "
                 f"(plain or .gz accepted)")
    return found


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    default_dir = os.environ.get(
        "METAMIXUP_MNIST_DIR",
        Path(__file__).resolve().parents[1] / "data" / "mnist")
    ap.add_argument("--data", type=Path, default=Path(default_dir))
    ap.add_argument("--subset", type=int, default=5000,
                    help="training samples used (0 = all 60000)")
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--batch-size", type=int, default=50)
    ap.add_argument("--lr", type=float, default=0.05)
    ap.add_argument("--mode", default="metamixup",
                    choices=("metamixup", "mixup-beta", "mixup-fixed", "baseline"))
    ap.add_argument("--seed", type=int, default=9)
    ap.add_argument("--out", type=Path, default=None,
                    help="where to save model.npz (optional)")
    args = ap.parse_args()

    paths = locate(args.data)
    train = data.load_idx(paths["train-images-idx3-ubyte"],
                          paths["train-labels-idx1-ubyte"])
    test = data.load_idx(paths["t10k-images-idx3-ubyte"],
                         paths["t10k-labels-idx1-ubyte"])
    if args.subset:
        train = train.subset(np.arange(args.subset))
    rest, meta_val = data.split_meta_validation(
        train, data.SplitSpec(50, seed=args.seed))
    splits = data.Splits(train=rest, meta_val=meta_val, test=test)

    cfg = meta.TrainConfig(
        mode=args.mode, epochs=args.epochs, batch_size=args.batch_size,
        seed=args.seed, arch=nets.cnn3(),
        optimizer=nets.OptimizerConfig(learning_rate=args.lr, momentum=0.9,
                                       weight_decay=1e-4, cosine_anneal=True,
                                       horizon=args.epochs))

    print(f"{len(rest)} train / {len(meta_val)} meta-val / {len(test)} test, "
          f"mode={args.mode}, {args.epochs} epochs")
    t0 = time.perf_counter()
    report = meta.train_supervised(splits, cfg)
    for rec in report.records:
        print(f"epoch {rec.epoch:>3}  loss {rec.train_loss:.4f}  "
              f"val {rec.val_loss:.4f}  test_err {rec.test_error:.4f}  "
              f"lambda {rec.lambda_mean:.3f}+-{rec.lambda_std:.3f}")
    print(f"final test error {report.final_test_error:.4f} "
          f"({time.perf_counter() - t0:.0f}s)")

    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        nets.save_model(report.model, args.out / "model.npz")
        print(f"saved {args.out / 'model.npz'}")


if __name__ == "__main__":
    main()
