"""Declarative dataset index: scene images and probes by illumination id.

The manifest is a single JSON file with paths relative to its own directory,
so a dataset directory can be relocated wholesale.  Real multi-illumination
datasets are ingested by emitting this same schema (optionally with
per-scene probes in ``scene_probes`` for scene-agnostic averaging).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


@dataclass
class DatasetManifest:
    """Maps scene id -> {illumination id -> image path} plus probe paths.

    ``probes`` holds scene-agnostic probes keyed by illumination id;
    ``scene_probes`` optionally holds per-scene probes (pre-averaging).
    All illumination ids are integers; paths are relative to ``root``.
    """

    scenes: dict[str, dict[int, str]] = field(default_factory=dict)
    probes: dict[int, str] = field(default_factory=dict)
    scene_probes: dict[str, dict[int, str]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    root: Path = field(default_factory=Path)

    def resolve(self, relpath: str) -> Path:
        return Path(self.root) / relpath

    @property
    def illumination_ids(self) -> list[int]:
        if self.scenes:
            first = next(iter(self.scenes.values()))
            return sorted(first.keys())
        return sorted(self.probes.keys())

    @property
    def scene_ids(self) -> list[str]:
        return sorted(self.scenes.keys())

    def validate(self, check_paths: bool = True) -> None:
        ids = None
        for scene_id, per_ill in self.scenes.items():
            scene_ids = set(per_ill.keys())
            if ids is None:
                ids = scene_ids
            elif scene_ids != ids:
                raise ValueError(
                    f"scene {scene_id!r} covers illumination ids {sorted(scene_ids)}, "
                    f"expected {sorted(ids)}"
                )
        if check_paths:
            for scene_id, per_ill in self.scenes.items():
                for ill_id, rel in per_ill.items():
                    if not self.resolve(rel).exists():
                        raise FileNotFoundError(
                            f"image for scene {scene_id!r}, illumination {ill_id} "
                            f"missing: {self.resolve(rel)}"
                        )
            for ill_id, rel in self.probes.items():
                if not self.resolve(rel).exists():
                    raise FileNotFoundError(
                        f"probe for illumination {ill_id} missing: {self.resolve(rel)}"
                    )
            for scene_id, per_ill in self.scene_probes.items():
                for ill_id, rel in per_ill.items():
                    if not self.resolve(rel).exists():
                        raise FileNotFoundError(
                            f"probe for scene {scene_id!r}, illumination {ill_id} "
                            f"missing: {self.resolve(rel)}"
                        )

    def to_dict(self) -> dict:
        return {
            "scenes": {
                s: {str(i): p for i, p in sorted(per.items())}
                for s, per in sorted(self.scenes.items())
            },
            "probes": {str(i): p for i, p in sorted(self.probes.items())},
            "scene_probes": {
                s: {str(i): p for i, p in sorted(per.items())}
                for s, per in sorted(self.scene_probes.items())
            },
            "meta": self.meta,
        }

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    @classmethod
    def load(cls, path, check_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        data = json.loads(path.read_text())
        manifest = cls(
            scenes={
                s: {int(i): p for i, p in per.items()}
                for s, per in data.get("scenes", {}).items()
            },
            probes={int(i): p for i, p in data.get("probes", {}).items()},
            scene_probes={
                s: {int(i): p for i, p in per.items()}
                for s, per in data.get("scene_probes", {}).items()
            },
            meta=data.get("meta", {}),
            root=path.parent,
        )
        manifest.validate(check_paths=check_paths)
        return manifest
