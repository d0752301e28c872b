import logging
import os
from datetime import datetime
from typing import Any, Dict, List, Mapping

import pandas as pd

from .errors import ArgumentError
from .storage import RunStore
from .trainer import RunHistory

logger = logging.getLogger(__name__)

# file name -> history fields; list-valued fields expand to one column per modality
SERIES = {
    "gap.csv": ["gap", "test_gap"],
    "phi_cmi.csv": ["phi_cmi", "test_phi_cmi"],
    "joint.csv": ["phi_cmi_joint", "phi_mi_joint"],
    "losses.csv": ["ce", "l_phi_mi", "l_phi_cmi", "total", "probe_loss"],
    "accuracy.csv": ["train_acc", "test_acc", "probe_acc"],
}


class ReportGenerator:
    """Generates execution summary reports."""

    def __init__(self, run_id: str, store: RunStore):
        self.run_id = run_id
        self.store = store
        self.start_time = datetime.now()
        self.stats: Dict[str, Any] = {}
        self.config: Dict[str, Any] = {}

    def set_stats(self, stats: Dict[str, Any]):
        self.stats = stats

    def set_config(self, config: Dict[str, Any]):
        self.config = config

    def generate(self) -> str:
        """Create and save the run report."""
        end_time = datetime.now()
        report = {
            "run_id": self.run_id,
            "start_time": self.start_time.isoformat(),
            "end_time": end_time.isoformat(),
            "duration_seconds": (end_time - self.start_time).total_seconds(),
            "stats": self.stats,
            "config": self.config,
        }
        path = self.store.save_json(f"summary_{self.run_id}.json", report)
        logger.info(f"Run summary saved to {path}")
        return path


def _columns(label: str, history: RunHistory, names: List[str]) -> Dict[str, List[float]]:
    columns: Dict[str, List[float]] = {}
    for name in names:
        values = history.series(name)
        if values and isinstance(values[0], list):
            for i in range(len(values[0])):
                columns[f"{label}_{name}_{i}"] = [v[i] for v in values]
        else:
            columns[f"{label}_{name}"] = values
    return columns


def series_frame(histories: Mapping[str, RunHistory], names: List[str]) -> pd.DataFrame:
    """One row per epoch; histories of different lengths are aligned on the epoch axis."""
    frames = []
    for label, history in histories.items():
        frame = pd.DataFrame(_columns(label, history, names), index=pd.Index(history.series("epoch"), name="epoch"))
        frames.append(frame)
    return pd.concat(frames, axis=1).sort_index().reset_index()


def modality_table(histories: Mapping[str, RunHistory]) -> pd.DataFrame:
    """Final-epoch held-out metrics per history: fused vs per-modality accuracy and contribution."""
    rows = []
    for label, history in histories.items():
        last = history.records[-1]
        row: Dict[str, Any] = {"epoch": last.epoch, "history": label, "fused_acc": last.test_acc}
        for i, acc in enumerate(last.probe_acc):
            row[f"probe_acc_{i}"] = acc
        for i, phi in enumerate(last.test_phi_cmi):
            row[f"phi_cmi_{i}"] = phi
        row["gap"] = last.test_gap
        rows.append(row)
    return pd.DataFrame(rows)


def emit_series(histories: Mapping[str, RunHistory], store: RunStore) -> List[str]:
    """Write the plot-ready CSV series for ``histories`` (label -> history)."""
    if not histories:
        raise ArgumentError("need at least one history")
    paths = [store.save_table(filename, series_frame(histories, names)) for filename, names in SERIES.items()]
    paths.append(store.save_table("modality_table.csv", modality_table(histories)))
    return paths


def history_labels(paths: List[str]) -> List[str]:
    """File stems, prefixed with the parent directory where stems collide."""
    stems = [os.path.splitext(os.path.basename(p))[0] for p in paths]
    labels = []
    for path, stem in zip(paths, stems):
        if stems.count(stem) > 1:
            parent = os.path.basename(os.path.dirname(os.path.abspath(path)))
            stem = f"{parent}_{stem}"
        labels.append(stem)
    if len(set(labels)) != len(labels):
        labels = [f"{i}_{label}" for i, label in enumerate(labels)]
    return labels
