"""Fold-level artifact store with sha256 chaining.

Each fold owns one directory with one file per stage and a manifest. When a
stage is recorded, the manifest stores the sha256 of its files plus a
snapshot of its parent stage's file hashes; loading a stage re-hashes both
its own files and its parent's files, so tampering with any intermediate
artifact is detected before the downstream stage is used. The combined stage
hash (sha256 over the stage's file hashes) is also embedded in each artifact
file as ``parent_sha256`` of its child.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


class ArtifactChainError(RuntimeError):
    pass


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class FoldStore:
    """Artifacts of one fold; stage files live directly in the fold directory."""

    def __init__(self, fold_dir):
        self.dir = Path(fold_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.dir / "manifest.json"

    def _manifest(self) -> dict:
        if self.manifest_path.exists():
            with open(self.manifest_path) as fh:
                return json.load(fh)
        return {}

    def path(self, filename: str) -> Path:
        return self.dir / filename

    def record(self, stage: str, filenames: list[str], parent: str | None) -> None:
        manifest = self._manifest()
        files = {name: file_sha256(self.dir / name) for name in filenames}
        entry = {"files": files, "parent": parent}
        if parent is not None:
            if parent not in manifest:
                raise ArtifactChainError(f"parent stage {parent!r} has not been recorded")
            entry["parent_files"] = dict(manifest[parent]["files"])
        manifest[stage] = entry
        with open(self.manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    def stage_hash(self, stage: str) -> str:
        """Combined hash over the stage's recorded file hashes."""
        manifest = self._manifest()
        if stage not in manifest:
            raise ArtifactChainError(f"stage {stage!r} has not been recorded")
        h = hashlib.sha256()
        for name in sorted(manifest[stage]["files"]):
            h.update(name.encode())
            h.update(manifest[stage]["files"][name].encode())
        return h.hexdigest()

    def verify(self, stage: str) -> None:
        """Check the stage's files and its parent's files against the manifest."""
        manifest = self._manifest()
        if stage not in manifest:
            raise ArtifactChainError(f"stage {stage!r} has not been recorded in {self.dir}")
        entry = manifest[stage]
        for name, recorded in entry["files"].items():
            path = self.dir / name
            if not path.exists():
                raise ArtifactChainError(f"{stage}: missing artifact file {name}")
            if file_sha256(path) != recorded:
                raise ArtifactChainError(f"{stage}: artifact file {name} was modified")
        parent = entry.get("parent")
        if parent is not None:
            if parent not in manifest:
                raise ArtifactChainError(f"{stage}: parent stage {parent!r} missing from manifest")
            for name, recorded in entry["parent_files"].items():
                path = self.dir / name
                if not path.exists() or file_sha256(path) != recorded:
                    raise ArtifactChainError(
                        f"{stage}: upstream artifact {name} (stage {parent}) changed since "
                        f"this stage was produced"
                    )

    def load_path(self, stage: str, filename: str) -> Path:
        """Verified path to a stage file; raises ArtifactChainError on tamper."""
        self.verify(stage)
        return self.dir / filename
