import json
import os
import re
import logging
from dataclasses import asdict, fields
from typing import Any, Dict, Optional, Tuple

import numpy as np
import pandas as pd

from .errors import SchemaError
from .model import MultimodalNet
from .trainer import EpochRecord, RunHistory

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "arm-checkpoint/1"
HISTORY_FIELDS = [f.name for f in fields(EpochRecord)]
SEED_IN_NAME = re.compile(r"seed(-?\d+)")


class RunStore:
    """Writes per-seed run artifacts (history, checkpoint) into one output directory."""

    def __init__(self, output_dir: str, encoding: str = "utf-8", tmp_suffix: str = ".tmp"):
        if output_dir.startswith("~"):
            output_dir = os.path.expanduser(output_dir)
        self.output_dir = os.path.abspath(output_dir)
        self.encoding = encoding
        self.tmp_suffix = tmp_suffix
        os.makedirs(self.output_dir, exist_ok=True)

    def history_path(self, seed: int) -> str:
        return os.path.join(self.output_dir, f"history_seed{seed}.jsonl")

    def checkpoint_path(self, seed: int) -> str:
        return os.path.join(self.output_dir, f"checkpoint_seed{seed}.json")

    def path(self, filename: str) -> str:
        return os.path.join(self.output_dir, filename)

    def save_history(self, history: RunHistory) -> str:
        """One JSON object per epoch, keys in EpochRecord field order."""
        lines = [json.dumps(asdict(r), ensure_ascii=False) for r in history.records]
        path = self.history_path(history.seed)
        self.write_text(path, "".join(line + "\n" for line in lines))
        logger.info(f"History ({len(lines)} epochs) saved to {path}")
        return path

    def save_checkpoint(self, net: MultimodalNet, seed: int, meta: Optional[Dict[str, Any]] = None) -> str:
        document = {
            "format": CHECKPOINT_FORMAT,
            "meta": {
                "input_dims": net.input_dims,
                "hidden_dim": net.hidden_dim,
                "num_classes": net.num_classes,
                "seed": int(seed),
                **(meta or {}),
            },
            "tensors": [
                {"name": name, "shape": list(value.shape), "data": value.reshape(-1).tolist()}
                for name, value in net.state_dict().items()
            ],
        }
        path = self.checkpoint_path(seed)
        self.write_text(path, json.dumps(document, ensure_ascii=False) + "\n")
        logger.info(f"Checkpoint saved to {path}")
        return path

    def save_json(self, filename: str, payload: Dict[str, Any]) -> str:
        path = self.path(filename)
        self.write_text(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")
        return path

    def save_table(self, filename: str, frame: pd.DataFrame, float_format: str = "%.10g") -> str:
        path = self.path(filename)
        self.write_text(path, frame.to_csv(index=False, float_format=float_format, lineterminator="\n"))
        logger.info(f"Wrote {len(frame)} rows to {path}")
        return path

    def write_text(self, final_path: str, text: str):
        """Crash-safe write using tmp -> replace."""
        tmp_path = final_path + self.tmp_suffix
        try:
            with open(tmp_path, "w", encoding=self.encoding, newline="\n") as f:
                f.write(text)
            os.replace(tmp_path, final_path)
        except OSError:
            logger.error(f"Failed write to {final_path}")
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise


def read_history(path: str) -> RunHistory:
    """Parse a history file. Any structural problem raises SchemaError naming the file."""
    match = SEED_IN_NAME.search(os.path.basename(path))
    history = RunHistory(seed=int(match.group(1)) if match else -1)
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise SchemaError(f"{path}: cannot read history ({e.strerror})") from None

    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as e:
            raise SchemaError(f"{path}: invalid JSON ({e.msg})", line=number) from None
        if not isinstance(row, dict) or list(row) != HISTORY_FIELDS:
            raise SchemaError(f"{path}: record keys do not match the history format", line=number)
        history.records.append(EpochRecord(**row))

    if not history.records:
        raise SchemaError(f"{path}: history holds no epochs")
    epochs = [r.epoch for r in history.records]
    if epochs != list(range(len(epochs))):
        raise SchemaError(f"{path}: epochs must run 0..T-1 without gaps")
    return history


def load_checkpoint(path: str) -> Tuple[MultimodalNet, Dict[str, Any]]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON ({e.msg})", line=e.lineno) from None

    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise SchemaError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    try:
        meta = document["meta"]
        net = MultimodalNet(meta["input_dims"], meta["hidden_dim"], meta["num_classes"])
        state = {t["name"]: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"]) for t in document["tensors"]}
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: malformed checkpoint ({e})") from None
    net.load_state_dict(state)
    logger.info(f"Loaded checkpoint {path} (seed {meta.get('seed')})")
    return net, meta
