"""Run manifest: content hashes of inputs and artifacts plus run metadata.

The manifest is the only artifact that carries wall-clock timing, so every
other output of a run stays byte-identical across repeated runs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_json(path, obj) -> None:
    """Canonical JSON: sorted keys, fixed indent, trailing newline."""
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n")


class RunManifest:
    def __init__(self, run_dir):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / MANIFEST_NAME
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {
            "config_hash": None, "seed": None, "inputs": {}, "artifacts": {}, "timing": {}}

    def start(self, config_hash: str, seed: int):
        if self.data["config_hash"] not in (None, config_hash):
            # a new config invalidates everything recorded so far
            self.data = {"config_hash": None, "seed": None, "inputs": {}, "artifacts": {}, "timing": {}}
        self.data["config_hash"] = config_hash
        self.data["seed"] = seed

    def record_input(self, path):
        self.data["inputs"][str(path)] = sha256_file(path)

    def record(self, *paths):
        for p in paths:
            rel = str(Path(p).relative_to(self.run_dir))
            self.data["artifacts"][rel] = sha256_file(p)

    def set(self, key: str, value):
        self.data[key] = value

    def timing(self, command: str, seconds: float):
        self.data["timing"][command] = round(seconds, 3)

    def save(self):
        write_json(self.path, self.data)
