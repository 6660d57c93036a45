"""Dataset augmentation by pre-generated relit variants.

`relight_dataset` renders every image under every guide probe once, up
front.  Training loops then call `select_variant`/`wrap_epoch` to swap a
random variant in for the original before their usual augmentations; the
original stays in rotation at index 0 of every pool entry.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .imgio import load_png, resize_image, save_png
from .probes import ProbeSet

POOL_FILE = "pool.json"
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class VariantPool:
    """id -> ordered variant paths (original first), relative to `root`."""

    variants: dict[str, list[str]] = field(default_factory=dict)
    root: Path = Path(".")
    meta: dict = field(default_factory=dict)

    def paths(self, image_id: str) -> list[Path]:
        if image_id not in self.variants:
            raise KeyError(f"unknown image id {image_id!r}")
        return [self.root / p for p in self.variants[image_id]]

    def validate(self) -> None:
        for image_id, rel_paths in self.variants.items():
            if not rel_paths:
                raise ValueError(f"empty variant list for {image_id!r}")
            for rel in rel_paths:
                if not (self.root / rel).exists():
                    raise FileNotFoundError(f"{image_id!r}: missing variant {rel}")

    def save(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / POOL_FILE
        payload = {
            "variants": {k: self.variants[k] for k in sorted(self.variants)},
            "meta": self.meta,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "VariantPool":
        path = Path(path)
        payload = json.loads(path.read_text(encoding="utf-8"))
        return cls(
            variants=dict(payload["variants"]),
            root=path.parent,
            meta=payload.get("meta", {}),
        )


def relight_dataset(
    model_ckpt,
    images_dir,
    probe_set: ProbeSet,
    out_dir,
    overwrite: bool = False,
) -> tuple[VariantPool, list[dict]]:
    """Write one relit PNG per (image, probe) and the pool index.

    Returns the pool plus a list of per-image failures ({path, error});
    a failed image is skipped, the run continues.
    """
    from .training import load_model  # local import, avoids a cycle

    if len(probe_set) == 0:
        raise ValueError("empty probe set")
    out_dir = Path(out_dir)
    pool_path = out_dir / POOL_FILE
    if pool_path.exists() and not overwrite:
        raise FileExistsError(f"{pool_path} exists; pass overwrite=True to regenerate")
    out_dir.mkdir(parents=True, exist_ok=True)

    model, _ = load_model(model_ckpt)
    input_size = model.config.input_size

    images = sorted(
        p for p in Path(images_dir).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        raise FileNotFoundError(f"no images under {images_dir}")

    variants: dict[str, list[str]] = {}
    errors: list[dict] = []
    probe_ids = probe_set.ids()
    for src in images:
        try:
            image = load_png(src)
        except Exception as exc:  # decode failures must not kill the run
            errors.append({"path": str(src), "error": str(exc)})
            continue
        orig_h, orig_w = image.shape[:2]
        if (orig_h, orig_w) != (input_size, input_size):
            model_in = resize_image(image, input_size)
        else:
            model_in = image

        entry = [os.path.relpath(src, out_dir)]
        for k, probe in enumerate(probe_set, start=1):
            _, relit = model.relight(model_in, probe)
            if (orig_h, orig_w) != (input_size, input_size):
                relit = np.clip(resize_image(relit, (orig_h, orig_w)), 0.0, 1.0)
            variant_path = out_dir / f"{src.stem}__v{k}.png"
            save_png(relit, variant_path)
            entry.append(variant_path.name)
        variants[src.stem] = entry

    pool = VariantPool(
        variants=variants,
        root=out_dir,
        meta={"probe_ids": probe_ids, "checkpoint": str(model_ckpt)},
    )
    pool.save(pool_path)
    return pool, errors


def select_variant(pool: VariantPool, image_id: str, rng: np.random.Generator) -> Path:
    """Uniform draw over the variant list (original included)."""
    options = pool.paths(image_id)
    return options[int(rng.integers(len(options)))]


def wrap_epoch(
    pool: VariantPool, dataset_order: Sequence[str], rng: np.random.Generator
) -> Iterator[Path]:
    """One selected variant per original, preserving dataset order. Feed the
    yielded paths into the consumer's standard augmentations."""
    for image_id in dataset_order:
        yield select_variant(pool, image_id, rng)
