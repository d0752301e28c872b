import json
import os

import pytest

from src.lock import RunLock
from src.monitor import StatusMonitor


def test_lock_is_released(tmp_path):
    lock = RunLock(str(tmp_path))
    with lock.acquire():
        assert open(lock.lock_file).read() == str(os.getpid())
    assert not os.path.exists(lock.lock_file)


def test_live_owner_blocks(tmp_path):
    lock = RunLock(str(tmp_path))
    with open(lock.lock_file, "w") as f:
        f.write(str(os.getppid()))
    with pytest.raises(RuntimeError):
        with lock.acquire():
            pass


def test_garbage_lock_is_overwritten(tmp_path):
    lock = RunLock(str(tmp_path))
    with open(lock.lock_file, "w") as f:
        f.write("not-a-pid")
    with lock.acquire():
        pass
    assert not os.path.exists(lock.lock_file)


def test_monitor_tracks_epochs(tmp_path):
    monitor = StatusMonitor(str(tmp_path), seed=2, epochs=10)
    monitor.update_epoch(4, {"test_acc": 0.75, "gap": 0.1, "epoch_size": 120})
    status = json.loads((tmp_path / "status_seed2.json").read_text(encoding="utf-8"))
    assert status["stage"] == "INIT"
    assert status["epoch"] == 4
    assert status["epoch_size"] == 120
