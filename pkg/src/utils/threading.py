"""Thread-safe utilities for parallel experiment runs."""
import csv
import logging
import os
import threading
import time
from typing import List, Sequence

logger = logging.getLogger(__name__)


class ThreadSafeCsvWriter:
    """CSV writer shared by threads; `append` keeps an existing file and its header."""
    def __init__(self, output_path: str, header: Sequence[str], append: bool = False):
        self._lock = threading.Lock()
        keep = append and os.path.exists(output_path) and os.path.getsize(output_path) > 0
        self._file = open(output_path, "a" if keep else "w", newline="")
        self._writer = csv.writer(self._file, lineterminator="\n")
        if not keep:
            self._writer.writerow(header)
            self._file.flush()

    def write(self, row: Sequence):
        with self._lock:
            self._writer.writerow(row)
            self._file.flush()

    def close(self):
        with self._lock:
            if not self._file.closed:
                self._file.close()


class ProgressReporter:
    """Background thread that logs which runs of a sweep finished, every `interval` seconds."""
    def __init__(self, total: int, label: str = "runs", interval: float = 5.0):
        self._total = total
        self._label = label
        self._interval = interval
        self._finished: List[str] = []
        self._failed: List[str] = []
        self._lock = threading.Lock()
        self._start_time = time.time()
        self._stop_event = threading.Event()
        self._thread = threading.Thread(target=self._report_loop, daemon=True)

    def start(self):
        self._thread.start()

    def stop(self):
        self._stop_event.set()
        self._thread.join(timeout=1)

    def finish(self, name: str, ok: bool = True):
        with self._lock:
            self._finished.append(name)
            if not ok:
                self._failed.append(name)

    @property
    def completed(self) -> int:
        with self._lock:
            return len(self._finished)

    def _report_loop(self):
        while not self._stop_event.wait(timeout=self._interval):
            self._log_progress()
        self._log_progress()

    def _log_progress(self):
        with self._lock:
            done, failed = len(self._finished), list(self._failed)
            last = self._finished[-1] if self._finished else None
        elapsed = time.time() - self._start_time
        eta = f"{elapsed / done * (self._total - done):.0f}s" if done else "?"
        message = f"[Progress] {done}/{self._total} {self._label} after {elapsed:.0f}s, ETA {eta}"
        if last is not None:
            message += f" | last: {last}"
        if failed:
            message += f" | failed: {', '.join(failed)}"
        logger.info(message)
