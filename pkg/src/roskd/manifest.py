"""Run manifests: which stages ran, with what arguments, producing which files."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__

MANIFEST_NAME = "manifest.json"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, run_dir, config_hash: str, root_seed: int, config: dict):
        self.run_dir = Path(run_dir)
        self.data = {"tool": "roskd", "tool_version": __version__, "config_hash": config_hash,
                     "root_seed": root_seed, "config": config, "stages": {}}

    @classmethod
    def open(cls, run_dir, config_hash: str, root_seed: int, config: dict) -> "Manifest":
        m = cls(run_dir, config_hash, root_seed, config)
        path = m.path
        if path.exists():
            existing = json.loads(path.read_text())
            if existing.get("config_hash") == config_hash and existing.get("root_seed") == root_seed:
                m.data["stages"] = existing.get("stages", {})
        return m

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        payload = json.loads(path.read_text())
        m = cls(path.parent, payload["config_hash"], payload["root_seed"], payload["config"])
        m.data = payload
        return m

    @property
    def path(self) -> Path:
        return self.run_dir / MANIFEST_NAME

    def record(self, stage: str, args: dict, artifacts, seconds: float):
        files = {}
        for a in sorted({Path(a) for a in artifacts}):
            rel = a.relative_to(self.run_dir).as_posix()
            files[rel] = sha256_file(a)
        self.data["stages"].pop(stage, None)
        self.data["stages"][stage] = {"args": args, "artifacts": files, "seconds": round(seconds, 3)}
        self.save()

    def save(self):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=False))

    def artifacts(self) -> dict[str, str]:
        out = {}
        for st in self.data["stages"].values():
            out.update(st["artifacts"])
        return out
