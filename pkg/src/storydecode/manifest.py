"""Run manifests: a sidecar describing what produced an output file.

The configuration hash covers only the arguments, never timestamps or
host details, so re-running a command with the same inputs yields the
same hash, and equal hashes promise byte-identical output files.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from datetime import datetime, timezone
from hashlib import blake2b

from . import __version__


def config_hash(obj: dict) -> str:
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return blake2b(canonical.encode("utf-8"), digest_size=16).hexdigest()


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class RunManifest:
    command: str
    args: dict
    outputs: tuple[str, ...]
    record_count: int | None = None
    seed: int | None = None
    package_version: str = field(default=__version__)
    created_at: str = field(default_factory=_utc_now)

    def to_json(self) -> dict:
        out = {
            "schema_version": 1,
            "command": self.command,
            "args": self.args,
            "args_hash": config_hash(self.args),
            "outputs": list(self.outputs),
            "package_version": self.package_version,
            "created_at": self.created_at,
        }
        if self.record_count is not None:
            out["record_count"] = self.record_count
        if self.seed is not None:
            out["seed"] = self.seed
        return out

    def write(self, path: str) -> None:
        directory = os.path.dirname(path) or "."
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(self.to_json(), fh, sort_keys=True, indent=2)
                fh.write("\n")
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def manifest_path_for(output_path: str) -> str:
    return output_path + ".manifest.json"
