"""Command-line entry point: gen-data, train, evaluate, gradcheck, ablate."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib import metadata
from pathlib import Path
from typing import Any, Sequence

from .config import RunConfig, load_config_file, resolve, snapshot
from .data import SynthSpec, generate, read_features, split, write_features
from .errors import ConfigError, GiamicError
from .experiments import run_ablation
from .gradcheck import THRESHOLD, run_gradcheck
from .params import load_params, save_params
from .train import alignment_report, evaluate, train

log = logging.getLogger("giamic")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.1.0"


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


# ---------------------------------------------------------------------------
# gen-data


def cmd_gen_data(args) -> int:
    beta = _floats(args.beta)
    if len(beta) == 1:
        beta = beta * 3
    try:
        spec = SynthSpec(n_samples=args.n, n_classes=args.classes, lengths=_ints(args.lengths),
                         raw_dims=_ints(args.raw_dims), alpha=args.alpha, beta=beta, delta=args.delta,
                         noise_std=args.noise, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if len(spec.lengths) != 3 or len(spec.raw_dims) != 3 or len(spec.beta) != 3:
        raise ConfigError("--lengths, --raw-dims and --beta take three values (V, S, T)")
    ds = generate(spec)
    write_features(ds, args.out)
    print(json.dumps({"out": str(args.out), "n": len(ds), "e": ds.n_classes, "lengths": list(ds.lengths),
                      "raw_dims": list(ds.raw_dims), "seed": args.seed, "fingerprint": ds.fingerprint()}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# train / evaluate


TRAIN_FLAGS = ("epochs", "gamma", "lr", "batch_size", "seed", "d", "n_heads", "msr_ablation", "dtype")


def _overrides(args) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key in TRAIN_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    for flag in ("no_msr", "no_mir", "no_mic"):
        if getattr(args, flag, False):
            out[flag] = True
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def resolve_run(args, dataset) -> RunConfig:
    """defaults < config file < command-line flags; data dims fill the gaps."""
    layered: dict[str, Any] = {}
    if getattr(args, "config", None):
        layered.update(load_config_file(args.config))
    layered.update(_overrides(args))
    layered.setdefault("raw_dims", list(dataset.raw_dims))
    layered.setdefault("n_classes", dataset.n_classes)
    cfg = resolve(layered)
    if tuple(cfg.model.raw_dims) != dataset.raw_dims or cfg.model.n_classes != dataset.n_classes:
        raise ConfigError(f"config dims {cfg.model.raw_dims}/{cfg.model.n_classes} do not match data "
                          f"{dataset.raw_dims}/{dataset.n_classes}")
    return cfg


def _load_split(args):
    dataset = read_features(args.data)
    if getattr(args, "folds", None):
        tr, te = split(dataset, args.folds, args.fold_index)
        return dataset, tr, te
    return dataset, dataset, None


def cmd_train(args) -> int:
    dataset, train_set, test_set = _load_split(args)
    cfg = resolve_run(args, dataset)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_path = Path(args.metrics_out) if args.metrics_out else out_dir / "metrics.jsonl"
    params_path = out_dir / "params.npz"
    manifest = {
        "config": snapshot(cfg),
        "seed": cfg.train.seed,
        "dataset": {"path": str(args.data), "fingerprint": dataset.fingerprint(),
                    "folds": args.folds, "fold_index": args.fold_index},
        "artifacts": {"metrics": str(metrics_path), "params": str(params_path),
                      "manifest": str(out_dir / "manifest.json")},
        "tool_version": tool_version(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    metrics_path.write_text("")

    def emit(rec):
        line = json.dumps(rec.to_json())
        print(line, flush=True)
        with metrics_path.open("a") as fh:
            fh.write(line + "\n")

    params, _ = train(train_set, cfg.model, cfg.train, on_epoch=emit)
    save_params(params_path, params, cfg.model)
    if test_set is not None and len(test_set):
        rec = evaluate(params, test_set, cfg.model, cfg.train)
        print(json.dumps({"heldout": rec.to_json()}), flush=True)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params, model_cfg = load_params(args.params)
    dataset, _, test_set = _load_split(args)
    data = test_set if test_set is not None else dataset
    tc = resolve(_overrides(args)).train
    rec = evaluate(params, data, model_cfg, tc)
    report = alignment_report(params, data, model_cfg, tc, export_path=args.export_embeddings)
    print(json.dumps({"metrics": rec.to_json(), "alignment": list(report.triple)}))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    if args.scale != "tiny":
        raise ConfigError(f"unsupported scale {args.scale!r}")
    results = run_gradcheck(seed=args.seed, corrupt=args.corrupt)
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{r.group:<10} entries={r.n_entries:<5d} max_rel_err={r.max_rel_err:.3e} {status}")
    failed = [r.group for r in results if not r.ok]
    if failed:
        print(f"gradcheck failed (threshold {THRESHOLD:g}): {', '.join(failed)}")
        return EXIT_NUMERIC
    print(f"all {len(results)} groups below {THRESHOLD:g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate


def format_table(rows, medians) -> str:
    lines = [f"{'variant':<8} {'seed':>5} {'WA':>7} {'UA':>7}"]
    for r in rows:
        lines.append(f"{r['variant']:<8} {r['seed']:>5d} {r['wa']:>7.4f} {r['ua']:>7.4f}")
    for v, m in medians.items():
        lines.append(f"{v:<8} {'med':>5} {m['wa']:>7.4f} {m['ua']:>7.4f}")
    return "\n".join(lines)


def cmd_ablate(args) -> int:
    dataset = read_features(args.data)
    cfg = resolve_run(args, dataset)
    seeds = list(range(args.seed_base, args.seed_base + args.seeds))
    rows, medians = run_ablation(dataset, cfg, seeds, args.folds or 5, args.fold_index)
    print(format_table(rows, medians))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps({"rows": rows, "medians": medians}, indent=2))
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="flat JSON object of config keys")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--epochs", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--n-heads", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--msr-ablation", choices=("drop", "concat"))
    p.add_argument("--no-msr", action="store_true", help="w/o MSR")
    p.add_argument("--no-mir", action="store_true", help="w/o MIR")
    p.add_argument("--no-mic", action="store_true", help="w/o MIC (gamma treated as 0)")
    p.add_argument("--folds", type=int, help="hold out one contiguous fold of the data")
    p.add_argument("--fold-index", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="giamic", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic GMIC dataset")
    g.add_argument("--n", type=int, default=512)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--lengths", default="8,8,8")
    g.add_argument("--raw-dims", default="32,32,24")
    g.add_argument("--alpha", type=float, default=2.0)
    g.add_argument("--beta", default="0.5")
    g.add_argument("--delta", type=float, default=0.5)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train and stream JSON-lines metrics")
    _add_run_flags(t)
    t.add_argument("--out-dir", default="run")
    t.add_argument("--metrics-out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score saved params and report alignment")
    e.add_argument("--data", required=True)
    e.add_argument("--params", required=True)
    e.add_argument("--export-embeddings")
    e.add_argument("--folds", type=int)
    e.add_argument("--fold-index", type=int, default=0)
    e.add_argument("--no-msr", action="store_true")
    e.add_argument("--no-mir", action="store_true")
    e.add_argument("--no-mic", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every parameter group")
    c.add_argument("--scale", default="tiny")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--corrupt", help=argparse.SUPPRESS)
    c.set_defaults(func=cmd_gradcheck)

    a = sub.add_parser("ablate", help="full model vs w/o MSR / MIR / MIC over several seeds")
    _add_run_flags(a)
    a.add_argument("--seeds", type=int, default=5)
    a.add_argument("--seed-base", type=int, default=0)
    a.add_argument("--json-out")
    a.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except GiamicError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
