"""Run manifests: config hashes, artifact digests, stage freshness checks.

Every pipeline stage writes a ``manifest.json`` next to its outputs.  A
downstream stage re-digests the files it consumes and compares them to the
producing stage's manifest, refusing to run on stale or tampered inputs.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

__all__ = ["StaleInputError", "RunManifest", "file_digest", "config_digest",
           "write_manifest", "load_manifest", "check_inputs"]

TOOL_VERSION = "ssblab-0.1.0"


class StaleInputError(RuntimeError):
    """An input file does not match the digest its producing stage recorded."""


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return "sha256:" + h.hexdigest()


def config_digest(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


@dataclass
class RunManifest:
    stage: str
    config_digest: str
    outputs: dict[str, str] = field(default_factory=dict)   # relative path -> digest
    inputs: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    tool_version: str = TOOL_VERSION
    created_at: float = field(default_factory=time.time)


def write_manifest(stage_dir: str | Path, manifest: RunManifest) -> Path:
    stage_dir = Path(stage_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    path = stage_dir / "manifest.json"
    path.write_text(json.dumps(asdict(manifest), indent=1, sort_keys=True))
    return path


def load_manifest(stage_dir: str | Path) -> RunManifest:
    path = Path(stage_dir) / "manifest.json"
    if not path.exists():
        raise StaleInputError(f"missing manifest for stage directory {stage_dir}")
    return RunManifest(**json.loads(path.read_text()))


def check_inputs(upstream_dir: str | Path, files: list[str | Path]) -> RunManifest:
    """Verify `files` against the upstream stage's recorded output digests.

    Returns the upstream manifest so the caller can chain config digests.
    """
    manifest = load_manifest(upstream_dir)
    upstream = Path(upstream_dir)
    for f in files:
        f = Path(f)
        rel = str(f.relative_to(upstream)) if f.is_absolute() else str(f)
        if rel not in manifest.outputs:
            raise StaleInputError(f"{rel} is not an output of stage {manifest.stage!r}")
        if not f.exists():
            raise StaleInputError(f"expected input {f} is missing")
        if file_digest(f) != manifest.outputs[rel]:
            raise StaleInputError(f"{rel} changed since stage {manifest.stage!r} ran; "
                                  "regenerate upstream outputs")
    return manifest
