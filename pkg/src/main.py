import sys
import os
import asyncio
import argparse
import logging
from dataclasses import asdict
from datetime import datetime
from typing import Any, Dict, List, Optional

# Add repo root to path to allow running as script from other locations
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.config import ExperimentConfig
from src.data import MultimodalDataset, generate_synthetic, load_csv, save_csv, split
from src.errors import ArgumentError, ConfigError, NumericalError, SchemaError
from src.lock import RunLock
from src.monitor import StatusMonitor
from src.report import ReportGenerator, emit_series, history_labels
from src.storage import RunStore, load_checkpoint, read_history
from src.sweep import parse_values, run_sweep, summarize
from src.trainer import evaluate, run_experiment

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NUMERIC = 3

DEFAULT_CONFIG = "config/config.yaml"
TOGGLES = ("dff", "bmml", "dsr")

logger = logging.getLogger("main")


def setup_logging(run_id: str, log_dir: str = "logs"):
    """Configure logging to file and console."""
    os.makedirs(log_dir, exist_ok=True)
    log_file = os.path.join(log_dir, f"run_{run_id}.log")

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
        handlers=[
            logging.FileHandler(log_file, encoding="utf-8"),
            logging.StreamHandler(sys.stdout),
        ],
        force=True,
    )


def load_config(config_path: Optional[str] = None) -> ExperimentConfig:
    """An explicit path must exist; the default path falls back to built-in defaults."""
    if config_path and not os.path.exists(config_path):
        raise ConfigError(f"config file {config_path} not found")
    return ExperimentConfig.load(config_path or DEFAULT_CONFIG)


def parse_seeds(raw: Optional[str]) -> Optional[List[int]]:
    if raw is None:
        return None
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise ArgumentError(f"--seed expects integers separated by commas, got {raw!r}") from None
    if not seeds:
        raise ArgumentError("--seed needs at least one value")
    return seeds


def parse_toggles(raw: Optional[str]) -> Dict[str, bool]:
    """``dff=off,bmml=on`` -> {"dff": False, "bmml": True}"""
    toggles: Dict[str, bool] = {}
    for item in (raw or "").split(","):
        if not item.strip():
            continue
        name, sep, state = item.strip().partition("=")
        if not sep or name not in TOGGLES or state not in ("on", "off"):
            raise ArgumentError(f"--toggle expects {'|'.join(TOGGLES)}=on|off, got {item!r}")
        toggles[name] = state == "on"
    return toggles


def apply_flags(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Flags override file values (flags > file > defaults)."""
    train: Dict[str, Any] = {
        "slope": getattr(args, "k", None),
        "lambda1": getattr(args, "lambda1", None),
        "lambda2": getattr(args, "lambda2", None),
        "epochs": getattr(args, "epochs", None),
        "warmup": getattr(args, "warmup", None),
    }
    train.update(parse_toggles(getattr(args, "toggle", None)))
    output = {
        "seeds": parse_seeds(getattr(args, "seed", None)),
        "workers": getattr(args, "workers", None),
    }
    if args.command in ("train", "eval", "sweep"):
        output["output_dir"] = args.out
    return cfg.with_overrides(train=train, output=output)


def load_dataset(cfg: ExperimentConfig) -> MultimodalDataset:
    if cfg.output.dataset_path:
        logger.info(f"Loading dataset from {cfg.output.dataset_path}")
        return load_csv(cfg.output.dataset_path)
    return generate_synthetic(cfg.synth)


def fmt(value: float) -> str:
    return f"{value:.10g}"


# *** commands ***

def cmd_gen_data(cfg: ExperimentConfig, args: argparse.Namespace, run_id: str) -> int:
    ds = generate_synthetic(cfg.synth)
    save_csv(ds, args.out)
    print(f"n={ds.n} m={ds.m} dims={','.join(map(str, ds.dims))}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args: argparse.Namespace, run_id: str) -> int:
    store = RunStore(cfg.output.output_dir)
    with RunLock(store.output_dir).acquire():
        reporter = ReportGenerator(run_id, store)
        reporter.set_config(cfg.to_dict())
        dataset = load_dataset(cfg)
        stats: Dict[str, Any] = {}
        for seed in cfg.run_seeds():
            monitor = StatusMonitor(store.output_dir, seed, cfg.train.epochs)
            net, history, metrics = run_experiment(cfg, dataset, seed, progress=cfg.output.progress, monitor=monitor)
            store.save_history(history)
            store.save_checkpoint(net, seed, meta={"epochs": cfg.train.epochs})
            stats[f"seed{seed}"] = {**asdict(metrics), **history.counters}
            probes = " ".join(f"probe_acc_{i}={fmt(a)}" for i, a in enumerate(metrics.probe_acc))
            print(f"seed {seed}: fused_acc={fmt(metrics.fused_acc)} {probes} gap={fmt(history.records[-1].gap)}")
        reporter.set_stats(stats)
        reporter.generate()
    logger.info("Training completed successfully.")
    return EXIT_OK


def cmd_eval(cfg: ExperimentConfig, args: argparse.Namespace, run_id: str) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    seeds = parse_seeds(args.seed)
    seed = seeds[0] if seeds else int(meta.get("seed", cfg.train.seed))
    _, test_ds = split(load_dataset(cfg), cfg.train.train_fraction, cfg.synth.seed)
    metrics = evaluate(net, test_ds, cfg.train.temperature, cfg.train.smoothing)

    store = RunStore(cfg.output.output_dir)
    path = store.save_json(f"eval_seed{seed}.json", {"checkpoint": args.checkpoint, **asdict(metrics)})
    probes = " ".join(f"probe_acc_{i}={fmt(a)}" for i, a in enumerate(metrics.probe_acc))
    print(f"fused_acc={fmt(metrics.fused_acc)} {probes} gap={fmt(metrics.gap)}")
    logger.info(f"Evaluation saved to {path}")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, args: argparse.Namespace, run_id: str) -> int:
    values = parse_values(args.param, args.values)
    store = RunStore(cfg.output.output_dir)
    with RunLock(store.output_dir).acquire():
        dataset = load_dataset(cfg)
        runs = asyncio.run(run_sweep(cfg, dataset, args.param, values, cfg.run_seeds(), cfg.output.workers))
        table = summarize(args.param, runs)
        store.save_table(f"sweep_{args.param}.csv", table)
    print(table.to_string(index=False, float_format=fmt))
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, args: argparse.Namespace, run_id: str) -> int:
    histories = {label: read_history(path) for label, path in zip(history_labels(args.histories), args.histories)}
    paths = emit_series(histories, RunStore(args.out))
    for path in paths:
        print(path)
    return EXIT_OK


# *** entry point ***

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Asymmetric reinforcement for multimodal representation learning")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("--config", help=f"Path to config YAML (default {DEFAULT_CONFIG})")

    p = sub.add_parser("gen-data", help="Write the synthetic dataset as CSV")
    common(p)
    p.add_argument("--out", required=True, help="Output CSV file")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("train", help="Train one run per seed")
    common(p)
    p.add_argument("--seed", help="Seed or comma-separated seeds")
    p.add_argument("--out", help="Output directory")
    p.add_argument("--toggle", help="dff|bmml|dsr=on|off, comma-separated")
    p.add_argument("--k", type=float, help="Resample slope (negative)")
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", type=int)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a checkpoint on the held-out split")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", help="Seed used to name the output file (default: checkpoint seed)")
    p.add_argument("--out", help="Output directory")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="Sweep one parameter over values x seeds")
    common(p)
    p.add_argument("--param", required=True, choices=["k", "lambda1", "lambda2", "resample", "ablation"])
    p.add_argument("--values", required=True, help="Comma-separated values")
    p.add_argument("--seed", help="Seed or comma-separated seeds")
    p.add_argument("--out", help="Output directory")
    p.add_argument("--toggle", help="dff|bmml|dsr=on|off, comma-separated")
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("report", help="Emit plot-ready CSV series from history files")
    common(p)
    p.add_argument("histories", nargs="+", help="history_seed<seed>.jsonl files")
    p.add_argument("--out", required=True, help="Output directory")
    p.set_defaults(handler=cmd_report)
    return parser


VALUE_OPTIONS = ("--values",)


def bind_option_values(argv: List[str]) -> List[str]:
    """`--values -1,-2` -> `--values=-1,-2`; argparse reads a leading dash as an option."""
    bound, i = [], 0
    while i < len(argv):
        if argv[i] in VALUE_OPTIONS and i + 1 < len(argv):
            bound.append(f"{argv[i]}={argv[i + 1]}")
            i += 2
        else:
            bound.append(argv[i])
            i += 1
    return bound


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(bind_option_values(sys.argv[1:] if argv is None else list(argv)))
    run_id = datetime.now().strftime("%Y%m%d_%H%M%S")
    try:
        cfg = apply_flags(load_config(args.config), args)
        setup_logging(run_id, cfg.output.log_dir)
        logger.info(f"Initialized Run ID: {run_id} ({args.command})")
        return args.handler(cfg, args, run_id)
    except NumericalError as e:
        logger.error(f"Numerical failure: {e}")
        return EXIT_NUMERIC
    except (ConfigError, SchemaError, ArgumentError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_USAGE
    except RuntimeError as e:
        logger.error(f"Pipeline locked: {e}")
        return EXIT_FAILURE
    except Exception:
        logger.exception("Fatal error in main pipeline")
        return EXIT_FAILURE


def cli():
    sys.exit(main())


if __name__ == "__main__":
    cli()
