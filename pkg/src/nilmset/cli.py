"""Command-line pipeline: channel synthesis, model training, and reporting.

Every run is driven by one JSON config (flags override file values) and is
reproducible from its seeds. Exit codes: 0 success, 1 usage error, 2 data
error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from dataclasses import replace
from pathlib import Path

from .appliances import APPLIANCE_NAMES, DEFAULT_DAYS, write_channel_files
from .errors import DivergedLossError, NilmsetError
from .ingest import parse_channel_with_stats, resample_gaps
from .models import ConvSpec, ModelSpec, RnnSpec, build, load_network, save_network
from .report import render_curves, render_table
from .sparse import EvolutionPolicy
from .synthesis import build_window_matrix, load_dataset, save_dataset, split, synthesize
from .training import (
    TrainConfig,
    compute_scaler,
    evaluate,
    load_report,
    save_curves_csv,
    save_report,
    train,
)

__version__ = "0.1.0"

MODEL_NAMES = ("dnn", "set_dnn", "cnn", "set_cnn", "rnn", "set_rnn")

DEFAULT_CONFIG = {
    "appliances": list(APPLIANCE_NAMES),
    "channels": [],
    "out": "run",
    "synthesis": {
        "window_len": 600,
        "step": 50,
        "active_threshold": 100,
        "repetitions": 10000,
        "seed": 0,
        "max_gap": 30.0,
        "train_fraction": 0.8,
    },
    "train": {
        "epochs": 50,
        "batch_size": 64,
        "learning_rate": 0.01,
        "seed": 0,
        "epsilon": 11.0,
        "zeta": 0.3,
        "regrow_init_scale": 0.1,
    },
    "model": {
        "hidden_sizes": [64, 64],
        "dropout_rate": 0.2,
        "conv": {"kernel_len": 9, "num_filters": 16, "pool_len": 4},
        "rnn": {"hidden_state_dim": 32, "chunk_len": 10},
    },
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser whose usage failures exit 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _load_config(path: str | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return _deep_merge(DEFAULT_CONFIG, user)


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict) -> None:
    path = out_dir / "manifest.json"
    manifest = {}
    if path.exists():
        with open(path, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
    manifest["version"] = __version__
    manifest[command] = {
        "config_hash": _config_hash(config),
        "seeds": {
            "synthesis": config["synthesis"]["seed"],
            "train": config["train"]["seed"],
        },
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _base_spec(config: dict) -> ModelSpec:
    model = config["model"]
    return ModelSpec(
        kind="dnn",
        sparse=False,
        input_len=config["synthesis"]["window_len"],
        hidden_sizes=tuple(model["hidden_sizes"]),
        conv=ConvSpec(**model["conv"]),
        rnn=RnnSpec(**model["rnn"]),
        dropout_rate=model["dropout_rate"],
        epsilon=config["train"]["epsilon"],
        init_scale=config["train"]["regrow_init_scale"],
    )


def _train_config(config: dict) -> TrainConfig:
    tc = config["train"]
    return TrainConfig(
        epochs=tc["epochs"],
        batch_size=tc["batch_size"],
        learning_rate=tc["learning_rate"],
        seed=tc["seed"],
        evolution=EvolutionPolicy(zeta=tc["zeta"], regrow_init_scale=tc["regrow_init_scale"]),
    )


# ---------------------------------------------------------------------------
# commands


def cmd_gen_channels(args) -> int:
    paths = write_channel_files(args.out, days=args.days, seed=args.seed)
    for name, path in zip(APPLIANCE_NAMES, paths):
        print(f"{name}: {path}")
    return 0


def cmd_synth(args) -> int:
    config = _load_config(args.config)
    if args.out:
        config["out"] = args.out
    if args.seed is not None:
        config["synthesis"]["seed"] = args.seed
    if args.repetitions is not None:
        config["synthesis"]["repetitions"] = args.repetitions
    if args.channels:
        config["channels"] = list(args.channels)
    channels = config["channels"]
    if len(channels) != 4:
        raise UsageError(f"exactly 4 channel files are required, got {len(channels)}")

    syn = config["synthesis"]
    matrices = []
    for i, path in enumerate(channels):
        series, stats = parse_channel_with_stats(path, i)
        series = resample_gaps(series, max_gap=syn["max_gap"])
        matrix = build_window_matrix(
            series, syn["window_len"], syn["step"], syn["active_threshold"]
        )
        matrices.append(matrix)
        name = config["appliances"][i]
        extra = f", clamped_negatives={stats.clamped_negatives}" if stats.clamped_negatives else ""
        print(f"appliance {i} ({name}): num_valid={matrix.num_valid}{extra}")

    dataset = synthesize(
        matrices, syn["repetitions"], syn["seed"], train_fraction=syn["train_fraction"]
    )
    out_dir = Path(config["out"])
    params = dict(syn)
    params["channels"] = list(map(str, channels))
    params["appliances"] = config["appliances"]
    save_dataset(dataset, out_dir, params=params)
    _write_manifest(out_dir, "synth", config)
    print(f"wrote {out_dir / 'features.csv'}, {out_dir / 'labels.csv'}, {out_dir / 'dataset.json'}")
    return 0


def _selected_specs(base: ModelSpec, model: str, variant: str) -> list[ModelSpec]:
    kinds = ("dnn", "cnn", "rnn") if model == "all" else (model,)
    flags = {"both": (False, True), "dense": (False,), "sparse": (True,)}[variant]
    return [replace(base, kind=k, sparse=s) for k in kinds for s in flags]


def cmd_train(args) -> int:
    config = _load_config(args.config)
    if args.out:
        config["out"] = args.out
    if args.seed is not None:
        config["train"]["seed"] = args.seed
    if args.epochs is not None:
        config["train"]["epochs"] = args.epochs
    if args.lr is not None:
        config["train"]["learning_rate"] = args.lr
    if args.batch_size is not None:
        config["train"]["batch_size"] = args.batch_size
    model, variant = (("all", "both") if args.all else (args.model, args.variant))

    out_dir = Path(config["out"])
    dataset = load_dataset(out_dir)
    tcfg = _train_config(config)
    specs = _selected_specs(_base_spec(config), model, variant)
    train_view, test_view = split(
        dataset, config["synthesis"]["train_fraction"], seed=tcfg.seed
    )
    scaler = compute_scaler(train_view)

    for spec in specs:
        cell_cfg = replace(tcfg, evolution=tcfg.evolution if spec.sparse else None)
        network = build(spec, seed=tcfg.seed)
        try:
            report = train(network, train_view, test_view, cell_cfg)
        except DivergedLossError as exc:
            if exc.report is not None:
                save_report(exc.report, out_dir / f"report_{spec.name}.json")
                save_curves_csv(exc.report, out_dir / f"curves_{spec.name}.csv")
            save_network(network, out_dir / f"checkpoint_{spec.name}.npz", scaler=scaler)
            print(f"error: {exc}", file=sys.stderr)
            return 3
        save_report(report, out_dir / f"report_{spec.name}.json")
        save_curves_csv(report, out_dir / f"curves_{spec.name}.csv")
        with open(out_dir / f"timing_{spec.name}.json", "w", encoding="ascii") as fh:
            json.dump({"epoch_seconds": report.epoch_seconds}, fh, indent=2)
            fh.write("\n")
        save_network(network, out_dir / f"checkpoint_{spec.name}.npz", scaler=scaler)
        print(
            f"{spec.name}: test_accuracy={report.final['accuracy']:.4f} "
            f"exact_match={report.final['exact_match']:.4f} "
            f"({sum(report.epoch_seconds):.1f}s)"
        )
    _write_manifest(out_dir, "train", config)
    return 0


def cmd_eval(args) -> int:
    config = _load_config(args.config)
    if args.out:
        config["out"] = args.out
    out_dir = Path(config["out"])
    name = ("set_" if args.variant == "sparse" else "") + args.model
    checkpoint = out_dir / f"checkpoint_{name}.npz"
    if not checkpoint.exists():
        raise NilmsetError(f"no checkpoint for {name} under {out_dir}")
    network, scaler = load_network(checkpoint)
    dataset = load_dataset(out_dir)
    report_path = out_dir / f"report_{name}.json"
    if report_path.exists():
        seed = load_report(report_path).config["seed"]
    elif args.seed is not None:
        seed = args.seed
    else:
        seed = config["train"]["seed"]
    _, test_view = split(dataset, config["synthesis"]["train_fraction"], seed=seed)
    metrics = evaluate(network, test_view, threshold=args.threshold, scaler=scaler)
    payload = {
        "model": name,
        "threshold": args.threshold,
        "loss": metrics.loss,
        "accuracy": metrics.accuracy,
        "exact_match": metrics.exact_match,
        "per_appliance": [
            dict(vars(m), appliance=config["appliances"][i])
            for i, m in enumerate(metrics.per_appliance)
        ],
    }
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    config = _load_config(args.config)
    if args.out:
        config["out"] = args.out
    out_dir = Path(config["out"])
    missing = [n for n in MODEL_NAMES if not (out_dir / f"report_{n}.json").exists()]
    if missing:
        raise NilmsetError(f"incomplete run directory, missing reports: {', '.join(missing)}")
    reports = [load_report(out_dir / f"report_{n}.json") for n in MODEL_NAMES]
    names = tuple(config["appliances"])
    written = render_curves(reports, out_dir, appliance_names=names)
    render_table(reports, out_dir, appliance_names=names)
    for path in written["svg"]:
        print(path)
    print(written["csv"])
    print(out_dir / "comparison.csv")
    print(out_dir / "comparison.txt")
    return 0


# ---------------------------------------------------------------------------


def build_arg_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nilmset", description=__doc__)
    parser.add_argument("--version", action="version", version=f"nilmset {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-channels", parser_class=_Parser,
                       help="write synthetic appliance channel files")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--days", type=int, default=DEFAULT_DAYS, help="days of data per channel")
    p.set_defaults(func=cmd_gen_channels)

    p = sub.add_parser("synth", parser_class=_Parser,
                       help="build the labeled aggregate dataset from 4 channels")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="run directory (overrides config)")
    p.add_argument("--seed", type=int, help="synthesis seed (overrides config)")
    p.add_argument("--repetitions", type=int, help="dataset rows (overrides config)")
    p.add_argument("--channels", nargs=4, metavar="FILE",
                   help="the 4 channel files in appliance order")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parser_class=_Parser,
                       help="train models on a synthesized dataset")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="run directory (overrides config)")
    p.add_argument("--seed", type=int, help="training seed (overrides config)")
    p.add_argument("--model", choices=["all", "dnn", "cnn", "rnn"], default="all")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sparse", dest="variant", action="store_const", const="sparse",
                       help="train only the sparse-evolution variant")
    group.add_argument("--dense", dest="variant", action="store_const", const="dense",
                       help="train only the dense variant")
    group.add_argument("--both", dest="variant", action="store_const", const="both",
                       help="train dense and sparse variants (default)")
    p.add_argument("--all", action="store_true", help="shorthand for --model all --both")
    p.add_argument("--epochs", type=int, help="override epoch count")
    p.add_argument("--lr", type=float, help="override learning rate")
    p.add_argument("--batch-size", type=int, help="override batch size")
    p.set_defaults(func=cmd_train, variant="both")

    p = sub.add_parser("eval", parser_class=_Parser,
                       help="evaluate a saved checkpoint on the test split")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="run directory (overrides config)")
    p.add_argument("--model", choices=["dnn", "cnn", "rnn"], required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sparse", dest="variant", action="store_const", const="sparse")
    group.add_argument("--dense", dest="variant", action="store_const", const="dense")
    p.add_argument("--seed", type=int, help="split seed when no report is present")
    p.add_argument("--threshold", type=float, default=0.5, help="decision threshold")
    p.set_defaults(func=cmd_eval, variant="dense")

    p = sub.add_parser("report", parser_class=_Parser,
                       help="render comparison figures and tables for a full run")
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--out", help="run directory (overrides config)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_arg_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergedLossError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (NilmsetError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
