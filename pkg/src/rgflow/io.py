"""Output directory bookkeeping: manifest, hashes, JSON."""
from __future__ import annotations

import hashlib
import json
import platform
import subprocess
import time
from pathlib import Path

import numpy as np

from . import __version__


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n", encoding="utf-8")
    return path


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


class Manifest:
    """One ``manifest.json`` per output directory.

    It is written with status ``running`` before any result, then rewritten
    with output hashes when the run finishes; a manifest that still says
    ``running`` marks an interrupted run.
    """

    def __init__(self, out_dir, command: str, config: dict):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.path = self.dir / "manifest.json"
        self.start = time.time()
        self.data = {
            "command": command,
            "config": config,
            "seed": config.get("seed"),
            "version": __version__,
            "git": git_describe(),
            "python": platform.python_version(),
            "numpy": np.__version__,
            "status": "running",
            "outputs": {},
            "stderrs": {},
        }
        write_json(self.path, self.data)

    def finish(self, outputs, stderrs: dict | None = None, status: str = "ok"):
        hashes = {}
        for p in outputs:
            p = Path(p)
            # figures carry renderer details; only data files are hashed
            if p.suffix in (".svg", ".png"):
                hashes[p.name] = None
            else:
                hashes[p.name] = sha256(p)
        self.data["outputs"] = hashes
        self.data["stderrs"] = stderrs or {}
        self.data["status"] = status
        self.data["wall_clock_s"] = round(time.time() - self.start, 3)
        write_json(self.path, self.data)
