"""Run manifests: what produced an output directory, and from which inputs."""

from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_NAME = "manifest.json"


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return "sha256:" + hashlib.sha256(blob.encode()).hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def tool_version() -> str:
    from . import __version__
    return __version__


@dataclass
class RunManifest:
    command: str
    seed: int
    config: dict
    argv: list
    config_hash: str = ""
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    tool_version: str = ""
    platform: str = ""
    started: str = ""
    finished: str = ""

    @classmethod
    def start(cls, command, seed, config, argv, inputs=()):
        m = cls(command, int(seed), dict(config), list(argv), config_hash=config_hash(config),
                tool_version=tool_version(), platform=platform.platform(), started=_now())
        for p in inputs:
            m.add_input(p)
        return m

    def add_input(self, path):
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path, root=None):
        key = str(Path(path).relative_to(root)) if root else str(path)
        self.outputs[key] = file_digest(path)

    def to_dict(self):
        return asdict(self)

    def write(self, out_dir) -> Path:
        """Finish the run and write ``manifest.json`` atomically into ``out_dir``."""
        self.finished = _now()
        out_dir = Path(out_dir)
        target = out_dir / MANIFEST_NAME
        fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=out_dir)
        try:
            with os.fdopen(fd, "w") as fh:
                json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return target


def read_manifest(path) -> RunManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    return RunManifest(**json.loads(path.read_text()))
