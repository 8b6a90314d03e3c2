"""Content-addressed on-disk cache of model replies."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
import time
from pathlib import Path

import numpy as np

CACHE_DIR_ENV = "ITERGROUND_CACHE_DIR"


def cache_key(image: np.ndarray, query: str, model_name: str) -> str:
    """SHA-256 over the crop's shape, dtype and pixel bytes plus query and model."""
    arr = np.ascontiguousarray(image)
    h = hashlib.sha256()
    header = json.dumps({"shape": list(arr.shape), "dtype": arr.dtype.str,
                         "query": query, "model": model_name}, sort_keys=True)
    h.update(header.encode("utf-8"))
    h.update(b"\0")
    h.update(arr.tobytes())
    return h.hexdigest()


class ResponseCache:
    """One JSON file per key under ``root``.

    Reads take no lock; writes are serialized and land via atomic rename,
    so a reader sees either nothing or a complete record.
    """

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._write_lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @classmethod
    def from_env(cls) -> ResponseCache | None:
        root = os.environ.get(CACHE_DIR_ENV)
        return cls(root) if root else None

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        try:
            with open(path, encoding="utf-8") as fh:
                record = json.load(fh)
        except (FileNotFoundError, json.JSONDecodeError):
            self.misses += 1
            return None
        self.hits += 1
        return record

    def put(self, key: str, raw_text: str, parsed_point: tuple[float, float],
            model_name: str) -> dict:
        record = {"key": key, "raw_text": raw_text,
                  "parsed_point": [float(parsed_point[0]), float(parsed_point[1])],
                  "model_name": model_name, "timestamp": time.time()}
        path = self._path(key)
        with self._write_lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh)
            os.replace(tmp, path)
        return record
