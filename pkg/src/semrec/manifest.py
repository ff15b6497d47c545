"""Run manifests: input fingerprints, provenance, and stale-artifact refusal.

Every file a pipeline command produces gets a sibling ``<file>.manifest.json``
recording the SHA-256 of the artifact itself, of every input file, plus the
seed, library versions, and stage timings. Consumers call ``verify_inputs``
before trusting an artifact: if any recorded input changed on disk since the
artifact was built, the run is refused unless explicitly forced.
"""

from __future__ import annotations

import hashlib
import json
import platform
from importlib import metadata

import numpy as np

from .graph import GraphError

MANIFEST_SUFFIX = ".manifest.json"


class StaleInputError(GraphError):
    """An artifact's recorded inputs no longer match the files on disk."""


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(artifact) -> str:
    return str(artifact) + MANIFEST_SUFFIX


def _versions() -> dict[str, str]:
    try:
        own = metadata.version("semrec")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {
        "semrec": own,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def write_manifest(artifact, command: str,
                   inputs: dict[str, str] | None = None,
                   seed: int | None = None,
                   timings: dict[str, float] | None = None,
                   extra: dict | None = None) -> str:
    """Record how ``artifact`` was produced; returns the manifest path."""
    body = {
        "artifact": str(artifact),
        "artifact_sha256": file_sha256(artifact),
        "command": command,
        "seed": seed,
        "versions": _versions(),
        "timings_s": {name: round(value, 6)
                      for name, value in (timings or {}).items()},
        "inputs": {
            name: {"path": str(path), "sha256": file_sha256(path)}
            for name, path in (inputs or {}).items()
        },
    }
    if extra:
        body["parameters"] = extra
    path = manifest_path(artifact)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_manifest(artifact) -> dict | None:
    """The manifest recorded for an artifact, or None if it has none."""
    path = manifest_path(artifact)
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        return None
    except json.JSONDecodeError as exc:
        raise GraphError(f"unreadable manifest {path}: {exc}") from None


def verify_inputs(artifact, force: bool = False, log=None) -> list[str]:
    """Compare an artifact's recorded fingerprints against the disk.

    Returns descriptions of everything stale. An artifact without a manifest
    passes vacuously (nothing recorded, nothing to contradict); any mismatch
    — an input edited since the artifact was built, a vanished input, or the
    artifact itself edited by hand — raises StaleInputError unless ``force``.
    """
    manifest = load_manifest(artifact)
    if manifest is None:
        return []
    stale: list[str] = []
    recorded = manifest.get("artifact_sha256")
    if recorded and file_sha256(artifact) != recorded:
        stale.append(f"{artifact} was modified after its manifest was written")
    for name, entry in manifest.get("inputs", {}).items():
        try:
            current = file_sha256(entry["path"])
        except FileNotFoundError:
            stale.append(f"{name}: input {entry['path']} is gone")
            continue
        if current != entry["sha256"]:
            stale.append(
                f"{name}: {entry['path']} changed after {artifact} was built")
    if stale and not force:
        raise StaleInputError(
            f"stale inputs for {artifact}: " + "; ".join(stale)
            + " — re-run the producing command, or pass --force")
    if stale and log is not None:
        log.warning("forced past stale inputs: %s", "; ".join(stale))
    return stale
