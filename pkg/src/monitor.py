import json
import logging
import os
import time
from typing import Any, Dict

logger = logging.getLogger(__name__)


class StatusMonitor:
    """
    Writes status_seed<seed>.json to the run directory so long runs can be watched.
    """
    def __init__(self, run_dir: str, seed: int, epochs: int):
        os.makedirs(run_dir, exist_ok=True)
        self.status_file = os.path.join(run_dir, f"status_seed{seed}.json")
        self.status = {
            "stage": "INIT",
            "last_updated": time.time(),
            "seed": seed,
            "epoch": None,
            "epochs": epochs,
            "test_acc": None,
            "gap": None,
            "epoch_size": None,
        }
        self.update()

    def update_epoch(self, epoch: int, record: Dict[str, Any]):
        """Update from an epoch record."""
        self.status["epoch"] = epoch
        self.status["test_acc"] = record.get("test_acc")
        self.status["gap"] = record.get("gap")
        self.status["epoch_size"] = record.get("epoch_size")
        self.update()

    def set_stage(self, stage: str):
        self.status["stage"] = stage
        self.update()

    def update(self):
        self.status["last_updated"] = time.time()
        try:
            with open(self.status_file, "w", encoding="utf-8") as f:
                json.dump(self.status, f, ensure_ascii=False, indent=2)
        except OSError as e:
            logger.debug(f"Could not write {self.status_file}: {e}")  # progress file only
