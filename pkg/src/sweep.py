"""
Seeded hyperparameter sweeps: one training run per (value, seed), fanned out
over a bounded worker pool and reduced to a mean/std table per value.
"""
import asyncio
import logging
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence

import numpy as np
import pandas as pd

from .config import ExperimentConfig
from .reinforcement import RESAMPLE_MODES
from .data import MultimodalDataset
from .errors import ArgumentError
from .trainer import run_experiment

logger = logging.getLogger(__name__)

SWEEP_PARAMS = ("k", "lambda1", "lambda2", "resample", "ablation")

# ablation value -> (dff, bmml, dsr)
ABLATIONS = {
    "none": (False, False, False),
    "dff": (True, False, False),
    "bmml": (False, True, False),
    "dsr": (False, False, True),
    "dff+bmml": (True, True, False),
    "dff+dsr": (True, False, True),
    "bmml+dsr": (False, True, True),
    "all": (True, True, True),
}


@dataclass
class SweepRun:
    value: str
    seed: int
    fused_acc: float
    probe_acc: List[float]
    gap: float


def parse_values(param: str, raw: str) -> List[str]:
    if param not in SWEEP_PARAMS:
        raise ArgumentError(f"unknown sweep parameter {param!r}; choose from {SWEEP_PARAMS}")
    values = [v.strip() for v in (raw or "").split(",") if v.strip()]
    if not values:
        raise ArgumentError("sweep needs at least one value")
    for value in values:
        sweep_overrides(param, value)
    return values


def sweep_overrides(param: str, value: str) -> Dict[str, Any]:
    """Train-section overrides that realize ``param = value``."""
    if param in ("k", "lambda1", "lambda2"):
        try:
            number = float(value)
        except ValueError:
            raise ArgumentError(f"{param} expects a number, got {value!r}") from None
        return {"slope" if param == "k" else param: number}
    if param == "resample":
        if value not in RESAMPLE_MODES:
            raise ArgumentError(f"resample mode must be one of {RESAMPLE_MODES}, got {value!r}")
        return {"resample_mode": value, "dsr": True}
    if param == "ablation":
        if value not in ABLATIONS:
            raise ArgumentError(f"ablation must be one of {sorted(ABLATIONS)}, got {value!r}")
        dff, bmml, dsr = ABLATIONS[value]
        return {"dff": dff, "bmml": bmml, "dsr": dsr}
    raise ArgumentError(f"unknown sweep parameter {param!r}")


def run_one(cfg: ExperimentConfig, dataset: MultimodalDataset, param: str, value: str, seed: int) -> SweepRun:
    """Single sweep cell; top-level so process pools can pickle it."""
    run_cfg = cfg.with_overrides(train=sweep_overrides(param, value))
    _, history, metrics = run_experiment(run_cfg, dataset, seed)
    return SweepRun(value=value, seed=seed, fused_acc=metrics.fused_acc,
                    probe_acc=list(metrics.probe_acc), gap=history.records[-1].gap)


async def run_sweep(cfg: ExperimentConfig, dataset: MultimodalDataset, param: str, values: Sequence[str],
                    seeds: Sequence[int], workers: int = 1) -> List[SweepRun]:
    """Runs come back in (value, seed) order whatever order they finish in."""
    if not values:
        raise ArgumentError("sweep needs at least one value")
    semaphore = asyncio.Semaphore(workers)
    loop = asyncio.get_running_loop()
    executor: Executor = ProcessPoolExecutor(workers) if workers > 1 else ThreadPoolExecutor(1)
    cells = [(value, seed) for value in values for seed in seeds]
    total = len(cells)
    done = 0

    async def worker(value: str, seed: int) -> SweepRun:
        nonlocal done
        async with semaphore:
            result = await loop.run_in_executor(executor, run_one, cfg, dataset, param, value, seed)
        done += 1
        logger.info(f"[{done}/{total}] {param}={value} seed={seed}: "
                    f"fused_acc={result.fused_acc:.6f} gap={result.gap:.6f}")
        return result

    try:
        return list(await asyncio.gather(*(worker(v, s) for v, s in cells)))
    finally:
        executor.shutdown(wait=True)


def summarize(param: str, runs: Sequence[SweepRun]) -> pd.DataFrame:
    """Mean and population std (ddof=0) per value, rows in first-seen value order."""
    rows = []
    for run in runs:
        row = {"value": run.value, "fused_acc": run.fused_acc, "gap": run.gap}
        row.update({f"probe_acc_{i}": acc for i, acc in enumerate(run.probe_acc)})
        rows.append(row)
    frame = pd.DataFrame(rows)
    probe_cols = [c for c in frame.columns if c.startswith("probe_acc_")]

    grouped = frame.groupby("value", sort=False)
    table = pd.DataFrame({
        "param": param,
        "runs": grouped.size(),
        "fused_acc_mean": grouped["fused_acc"].mean(),
        "fused_acc_std": grouped["fused_acc"].agg(lambda s: float(np.std(s, ddof=0))),
        **{f"{c}_mean": grouped[c].mean() for c in probe_cols},
        "gap_mean": grouped["gap"].mean(),
        "gap_std": grouped["gap"].agg(lambda s: float(np.std(s, ddof=0))),
    })
    table = table.reset_index()
    return table[["param", "value", "runs", "fused_acc_mean", "fused_acc_std",
                  *[f"{c}_mean" for c in probe_cols], "gap_mean", "gap_std"]]
