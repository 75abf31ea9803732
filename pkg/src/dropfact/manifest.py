"""Run manifests: enough context to rerun a command bit-for-bit.

A manifest stores the fully resolved configuration (every default made
explicit), so feeding it back through --config replays the run.  The CSV
outputs of a replay are byte-identical; the manifest itself is not part of
that guarantee (it carries wall-clock timings).
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

from . import __version__


@dataclass
class RunManifest:
    command: str
    resolved_config: dict
    version: str = __version__
    seeds: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    created: str = ""

    def write(self, path) -> None:
        """Atomic write: temp file in the target directory, then replace."""
        if not self.created:
            self.created = datetime.now(timezone.utc).isoformat()
        payload = json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"
        directory = os.path.dirname(os.fspath(path)) or "."
        fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def load_manifest(path) -> RunManifest:
    with open(path) as fh:
        raw = json.load(fh)
    return RunManifest(
        command=raw["command"],
        resolved_config=raw["resolved_config"],
        version=raw.get("version", "unknown"),
        seeds=raw.get("seeds", {}),
        outputs=raw.get("outputs", []),
        timings=raw.get("timings", {}),
        created=raw.get("created", ""),
    )


def is_manifest(payload: dict) -> bool:
    """A config file that contains resolved_config is a replayable manifest."""
    return isinstance(payload, dict) and "resolved_config" in payload
