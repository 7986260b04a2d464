"""Full model vs w/o MSR, w/o MIR, w/o MIC on the mixed-signal spec, median over seeds."""
import argparse
import json
import logging

from giamic.cli import format_table
from giamic.config import ModelConfig, RunConfig, TrainConfig
from giamic.data import generate
from giamic.experiments import MIXED, run_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=15)
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--json-out")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    model = ModelConfig(d=args.d, n_heads=4, raw_dims=MIXED.raw_dims, n_classes=MIXED.n_classes)
    rows, medians = run_ablation(generate(MIXED), RunConfig(model, TrainConfig(epochs=args.epochs)),
                                 range(args.seeds))
    print(format_table(rows, medians))
    if args.json_out:
        with open(args.json_out, "w") as fh:
            json.dump({"rows": rows, "medians": medians}, fh, indent=2)


if __name__ == "__main__":
    main()
