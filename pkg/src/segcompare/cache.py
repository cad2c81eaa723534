"""Content-addressed JSON cache for model outputs.

Keys are derived from the model id plus a hash of the exact float32 image
bytes, so warm reruns of a pipeline reuse every prediction, saliency map,
and embedding without touching the models. Writes are atomic
(tmp + rename); a per-key in-process lock makes compute-if-absent
single-flight, which keeps evaluation counts deterministic under threads.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from pathlib import Path

import numpy as np


def image_digest(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(np.asarray(image, dtype=np.float32))
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def key_digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class JsonCache:
    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._counter_lock = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _path(self, kind: str, key: str) -> Path:
        directory = self.root / kind
        directory.mkdir(parents=True, exist_ok=True)
        return directory / f"{key}.json"

    def _lock_for(self, name: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(name, threading.Lock())

    def get_or_compute(self, kind: str, key: str, compute):
        """Return the cached payload or compute, store, and return it.

        `compute` runs at most once per key per process; concurrent callers
        block on the in-flight computation.
        """
        path = self._path(kind, key)
        with self._lock_for(f"{kind}/{key}"):
            if path.exists():
                with self._counter_lock:
                    self.hits += 1
                with open(path, "r", encoding="utf-8") as fh:
                    return json.load(fh)
            value = compute()
            with self._counter_lock:
                self.misses += 1
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                json.dump(value, fh)
            os.replace(tmp, path)
            return value


class NullCache(JsonCache):
    """Cache that never stores anything; every lookup recomputes."""

    def __init__(self):
        self.hits = 0
        self.misses = 0

    def get_or_compute(self, kind, key, compute):
        self.misses += 1
        return compute()
